//! Attention-driven retrieval triggering (MLAG) and query construction (LRP).

mod lrp;
mod mlag;
mod query;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use lrp::{
    atten_score, context_embedding, layer_softmax_weights, lrp_candidates, psi, relevance_score,
    select_query_tokens, LrpCandidate, RelevanceScore,
};
pub use mlag::{
    gradient_factor, gradient_from_levels, head_entropy_importance, info_density, layer_coefficient, mlag_score,
    normalized_avg_attention, relevance_precheck, scaling_factor, semantic_filter, MlagBreakdown,
};
pub use query::{formulate_query, render_query_prompt, RetrievalQuery, QUERY_PROMPT};

use crate::model::vocab::STOPWORDS;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AtlasError {
    #[error("layer gradient needs at least two layers")]
    TooFewLayers,
    #[error("c_max must be > 0")]
    ComputeMax,
    #[error("candidate position {j} is not before current position {i}")]
    NotPreceding { i: usize, j: usize },
    #[error("token id {0} outside the vocabulary")]
    UnknownToken(u32),
    #[error("no tokens selected")]
    EmptySelection,
    #[error("invalid atlas config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtlasConfig {
    pub enabled: bool,
    pub alpha0: f64,
    pub lambda: f64,
    pub tau_p: f64,
    pub k_tokens: usize,
    pub beta: f64,
    pub tau_embed: f64,
    pub mlag_threshold: f64,
    /// Compute budget in resident KV-cache bytes.
    pub compute_max: f64,
    /// One word per line; the built-in list is used when absent.
    pub stopwords_path: Option<String>,
    pub max_retrievals: usize,
    /// Ask the backend to rewrite the selected tokens into a query.
    pub query_via_backend: bool,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            alpha0: 0.8,
            lambda: 4.0,
            tau_p: 0.5,
            k_tokens: 6,
            beta: 0.7,
            tau_embed: 2.0,
            mlag_threshold: 0.001,
            compute_max: 0.9 * 8.0 * 1024.0 * 1024.0,
            stopwords_path: None,
            max_retrievals: 3,
            query_via_backend: false,
        }
    }
}

impl AtlasConfig {
    pub fn validate(&self) -> Result<(), AtlasError> {
        let bad = |m: &str| Err(AtlasError::Config(m.into()));
        if !(0.7..=1.0).contains(&self.alpha0) {
            return bad("alpha0 must be in [0.7, 1.0]");
        }
        if !(3.0..=5.0).contains(&self.lambda) {
            return bad("lambda must be in [3, 5]");
        }
        if !(self.tau_p > 0.0 && self.tau_p < 1.0) {
            return bad("tau_p must be in (0, 1)");
        }
        if !(5..=7).contains(&self.k_tokens) {
            return bad("k_tokens must be in [5, 7]");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta must be in [0, 1]");
        }
        if !(self.tau_embed > 0.0) {
            return bad("tau_embed must be > 0");
        }
        if !(self.mlag_threshold >= 0.0) {
            return bad("mlag_threshold must be >= 0");
        }
        if !(self.compute_max > 0.0) {
            return Err(AtlasError::ComputeMax);
        }
        Ok(())
    }
}

pub fn default_stopwords() -> HashSet<String> {
    STOPWORDS.iter().map(|s| s.to_string()).collect()
}

pub fn load_stopwords(path: &Path) -> std::io::Result<HashSet<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect())
}
