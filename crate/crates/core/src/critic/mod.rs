//! Importance-scored KV-cache compression.

mod compress;
mod grad;
mod importance;

use serde::{Deserialize, Serialize};

pub use compress::{adaptive_ratio, compress_cache, retain_count, select_retained, should_compress};
pub use grad::{attention_mse_grad, attention_mse_loss, grad_importance, grad_importance_layer, AttnGrad};
pub use importance::{
    attn_importance, attn_importance_layer, entropy_importance, entropy_importance_layer, hybrid_importance,
};

use crate::model::KvCache;
use crate::scalar::Real;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CriticError {
    #[error("empty cache")]
    EmptyCache,
    #[error("need at least two cached tokens, got {0}")]
    TooFew(usize),
    #[error("length mismatch: {0}")]
    Mismatch(String),
    #[error("mem_total must be > 0")]
    MemTotal,
    #[error("invalid compression config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportanceWeights {
    pub w_attn: f64,
    pub w_entropy: f64,
    pub w_grad: f64,
}

impl Default for ImportanceWeights {
    fn default() -> Self {
        Self { w_attn: 0.4, w_entropy: 0.3, w_grad: 0.3 }
    }
}

impl ImportanceWeights {
    pub fn validate(&self) -> Result<(), CriticError> {
        let w = [self.w_attn, self.w_entropy, self.w_grad];
        if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CriticError::Config(format!("weights {w:?} must be nonnegative and sum to 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionConfig {
    pub enabled: bool,
    pub ratio: f64,
    pub min_tokens: usize,
    pub adapt_alpha: f64,
    pub r_max: f64,
    /// Memory budget in bytes that `M_used` (resident K/V bytes) is measured against.
    pub mem_total: f64,
    pub weights: ImportanceWeights,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            ratio: 0.3,
            min_tokens: 32,
            adapt_alpha: 0.2,
            r_max: 0.6,
            mem_total: 8.0 * 1024.0 * 1024.0,
            weights: ImportanceWeights::default(),
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<(), CriticError> {
        self.weights.validate()?;
        let ok = self.ratio > 0.0
            && self.ratio < 1.0
            && self.min_tokens >= 1
            && self.adapt_alpha >= 0.0
            && self.r_max > self.ratio
            && self.r_max < 1.0
            && self.mem_total > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CriticError::Config("need 0 < ratio < r_max < 1, min_tokens >= 1, adapt_alpha >= 0, mem_total > 0".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionEvent {
    pub step: usize,
    pub n_before: usize,
    pub n_after: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub n_before: usize,
    pub n_after: usize,
    /// Retained over processed tokens after the latest event.
    pub achieved_ratio: f64,
    /// Key dot products not computed because of earlier evictions.
    pub attention_dot_products_saved: u64,
    pub events: Vec<CompressionEvent>,
}

/// Per-layer hybrid scores for every cached token.
pub fn layer_scores<T: Real>(cache: &KvCache<T>, weights: &ImportanceWeights) -> Result<Vec<Vec<T>>, CriticError> {
    let dh = cache.head_dim();
    cache
        .layers
        .iter()
        .map(|lc| {
            let (a, _) = attn_importance_layer(&lc.attn)?;
            let (e, _) = entropy_importance_layer(&lc.attn)?;
            let (g, _) = if weights.w_grad > 0.0 {
                grad_importance_layer(lc, dh)?
            } else {
                (vec![T::zero(); a.len()], true)
            };
            hybrid_importance(weights, &a, &e, &g)
        })
        .collect()
}

/// Compression driver for one generation stream.
#[derive(Debug, Clone)]
pub struct Critic {
    pub config: CompressionConfig,
    pub stats: CompressionStats,
}

impl Critic {
    pub fn new(config: CompressionConfig) -> Result<Self, CriticError> {
        config.validate()?;
        Ok(Self { config, stats: CompressionStats::default() })
    }

    /// Call after every forward step; compresses once more than
    /// `min_tokens` tokens have been processed.
    pub fn after_step<T: Real>(&mut self, cache: &mut KvCache<T>, step: usize) -> Result<Option<CompressionEvent>, CriticError> {
        let heads = cache.num_heads() as u64;
        let total = cache.total_processed;
        self.stats.attention_dot_products_saved +=
            cache.layers.iter().map(|l| heads * (total - l.len()) as u64).sum::<u64>();
        if !should_compress(total, self.config.min_tokens) {
            return Ok(None);
        }
        let n = cache.n_kept();
        if n < 2 {
            return Ok(None);
        }
        let r = adaptive_ratio(
            self.config.ratio,
            self.config.adapt_alpha,
            cache.memory_bytes() as f64,
            self.config.mem_total,
            self.config.r_max,
        )?;
        let n_c = retain_count(n, r, self.config.min_tokens)?;
        let scores = layer_scores(cache, &self.config.weights)?;
        compress_cache(cache, &scores, n_c)?;
        let ev = CompressionEvent { step, n_before: n, n_after: n_c, ratio: r };
        self.stats.n_before = n;
        self.stats.n_after = n_c;
        self.stats.achieved_ratio = n_c as f64 / total as f64;
        self.stats.events.push(ev.clone());
        Ok(Some(ev))
    }
}
