use serde::{Deserialize, Serialize};

use crate::backend::{require_introspection, Backend, ChatMessage};
use crate::engine::{Generation, Repetition};
use crate::model::LayerAttention;
use crate::sampling::{softmax_temperature, SamplerParams};
use crate::scalar::LOG_EPS;

use super::DecoderError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyMetrics {
    /// Token entropy in bits.
    pub h: f64,
    pub varentropy: f64,
    /// Attention entropy in bits, summed over heads and query rows.
    pub h_attn: f64,
    /// Variance over heads of per-head attention entropy.
    pub v_attn: f64,
    pub agreement: f64,
    pub interaction: f64,
}

/// Entropy (bits) and varentropy of `softmax(logits)`.
pub fn uncertainty_metrics(logits: &[f64]) -> (f64, f64) {
    let Ok(p) = softmax_temperature(logits, 1.0) else {
        return (0.0, 0.0);
    };
    let mut h = 0.0;
    for &pi in &p {
        if pi > 0.0 {
            h -= pi * pi.log2();
        }
    }
    let h = h.clamp(0.0, (p.len() as f64).log2());
    let mut v = 0.0;
    for &pi in &p {
        if pi > 0.0 {
            v += pi * (pi.log2() + h).powi(2);
        }
    }
    (h, v)
}

/// Attention entropy, its variance over heads, head agreement and
/// interaction strength for one layer. Only stored (causal) entries enter
/// the interaction mean.
pub fn attention_metrics(attn: &LayerAttention<f64>) -> (f64, f64, f64, f64) {
    let nh = attn.num_heads();
    if nh == 0 || attn.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let ln2 = std::f64::consts::LN_2;
    let per_head: Vec<f64> =
        attn.heads.iter().map(|rows| rows.iter().map(|r| r.entropy).sum::<f64>() / ln2).collect();
    let h_attn: f64 = per_head.iter().sum();
    let mean_h = h_attn / nh as f64;
    let v_attn = per_head.iter().map(|h| (h - mean_h).powi(2)).sum::<f64>() / nh as f64;

    let n = attn.len();
    let mut l1 = vec![0.0; nh];
    let (mut abs_log, mut count) = (0.0, 0usize);
    for row in 0..n {
        let width = attn.heads.iter().map(|rows| rows[row].w.len()).max().unwrap_or(0);
        for col in 0..width {
            let mean = (0..nh).map(|h| attn.weight(h, row, col)).sum::<f64>() / nh as f64;
            for (h, acc) in l1.iter_mut().enumerate() {
                *acc += (attn.weight(h, row, col) - mean).abs();
            }
        }
        for rows in &attn.heads {
            for &a in rows[row].w.iter() {
                abs_log += (a + LOG_EPS).ln().abs();
                count += 1;
            }
        }
    }
    let agreement = l1.iter().sum::<f64>() / nh as f64;
    let interaction = if count == 0 { 0.0 } else { abs_log / count as f64 };
    (h_attn, v_attn, agreement, interaction)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Betas {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
    pub b6: f64,
    pub b7: f64,
}

impl Default for Betas {
    fn default() -> Self {
        Self::uniform(0.3)
    }
}

impl Betas {
    pub fn uniform(b: f64) -> Self {
        Self { b1: b, b2: b, b3: b, b4: b, b5: b, b6: b, b7: b }
    }
}

/// Clip ranges for the multipliers; `k` is bounded by `k_max_factor * k0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptBounds {
    pub tau: (f64, f64),
    pub top_p: (f64, f64),
    pub k_max_factor: usize,
    pub min_p: (f64, f64),
}

impl Default for AdaptBounds {
    fn default() -> Self {
        Self { tau: (0.5, 2.0), top_p: (0.5, 1.0), k_max_factor: 2, min_p: (0.25, 2.0) }
    }
}

pub fn adapt_sampler_params(m: &UncertaintyMetrics, base: &SamplerParams, b: &Betas, bounds: &AdaptBounds) -> SamplerParams {
    let u = m.h + m.varentropy;
    let tau_mult = (1.0 + b.b1 * u + b.b2 * m.h_attn - b.b3 * m.agreement).clamp(bounds.tau.0, bounds.tau.1);
    let top_mult = (1.0 + b.b4 * m.v_attn).clamp(bounds.top_p.0, bounds.top_p.1);
    let k_max = (base.top_k * bounds.k_max_factor).max(1);
    let k_raw = (base.top_k as f64 * (1.0 + b.b5 * m.interaction - b.b6 * m.agreement)).round_ties_even();
    let top_k = if k_raw.is_finite() { (k_raw.max(1.0) as usize).min(k_max) } else { base.top_k };
    let min_mult = (1.0 - b.b7 * u).clamp(bounds.min_p.0, bounds.min_p.1);
    SamplerParams {
        temperature: base.temperature * tau_mult,
        top_p: (base.top_p * top_mult).min(1.0),
        top_k,
        min_p: (base.min_p * min_mult).min(1.0),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyStep {
    pub metrics: UncertaintyMetrics,
    pub params: SamplerParams,
    pub token: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyGuided {
    pub text: String,
    pub tokens: Vec<u32>,
    pub steps: Vec<EntropyStep>,
}

/// Samples token by token, re-deriving the sampler from the current
/// uncertainty before every draw. With all betas zero this reproduces the
/// toy backend's fixed-parameter output for the same seed.
pub fn entropy_guided_generate(
    backend: &dyn Backend,
    messages: &[ChatMessage],
    base: &SamplerParams,
    betas: &Betas,
    bounds: &AdaptBounds,
    max_tokens: usize,
    seed: u64,
) -> Result<EntropyGuided, DecoderError> {
    let intro = require_introspection(backend, "entropy-guided decoding")?;
    base.validate().map_err(|e| DecoderError::InvalidArgument(e.to_string()))?;
    let model = intro.model();
    let max_seq = model.config.max_seq;
    if max_tokens >= max_seq {
        return Err(DecoderError::InvalidArgument(format!("max_tokens must be < max_seq {max_seq}")));
    }
    let mut prompt = intro.encode_messages(messages);
    let room = max_seq - max_tokens;
    if prompt.len() > room {
        prompt.drain(..prompt.len() - room);
    }
    let eos = intro.vocab().eos();
    let rep = Repetition::default();
    let mut g = Generation::new(model, prompt, seed)?;
    let mut steps = Vec::new();
    for _ in 0..max_tokens {
        g.advance()?;
        let (h, varentropy) = uncertainty_metrics(g.logits());
        let last = g.cache.layers.last().map(|l| &l.attn);
        let (h_attn, v_attn, agreement, interaction) = last.map(attention_metrics).unwrap_or_default();
        let metrics = UncertaintyMetrics { h, varentropy, h_attn, v_attn, agreement, interaction };
        let params = adapt_sampler_params(&metrics, base, betas, bounds);
        let c = g.choose(&params, &rep)?;
        steps.push(EntropyStep { metrics, params, token: c.token });
        g.push(c.token);
        if Some(c.token) == eos {
            break;
        }
    }
    Ok(EntropyGuided { text: intro.vocab().decode(g.generated()), tokens: g.generated().to_vec(), steps })
}
