//! Temperature softmax, top-k / nucleus / min-p filtering, and draws.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplingError {
    #[error("temperature must be > 0, got {0}")]
    Temperature(f64),
    #[error("non-finite logit at index {0}")]
    NonFinite(usize),
    #[error("empty distribution")]
    Empty,
    #[error("invalid sampler parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub min_p: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self { temperature: 0.7, top_p: 0.9, top_k: 40, min_p: 0.05 }
    }
}

impl SamplerParams {
    /// No filtering at temperature 1.
    pub fn neutral(vocab_size: usize) -> Self {
        Self { temperature: 1.0, top_p: 1.0, top_k: vocab_size.max(1), min_p: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        let ok = self.temperature > 0.0
            && self.temperature.is_finite()
            && self.top_p > 0.0
            && self.top_p <= 1.0
            && self.top_k >= 1
            && (0.0..=1.0).contains(&self.min_p);
        if ok {
            Ok(())
        } else {
            Err(SamplingError::Params(format!("{self:?}")))
        }
    }
}

pub fn softmax_temperature<T: Real>(logits: &[T], temperature: T) -> Result<Vec<T>, SamplingError> {
    if !(temperature > T::zero()) {
        return Err(SamplingError::Temperature(temperature.f64()));
    }
    if logits.is_empty() {
        return Err(SamplingError::Empty);
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(SamplingError::NonFinite(i));
    }
    let mut p: Vec<T> = logits.iter().map(|&z| z / temperature).collect();
    crate::model::softmax_in_place(&mut p);
    Ok(p)
}

/// Index order by descending probability, ties by ascending index.
fn descending<T: Real>(probs: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Applies top-k, then nucleus, then min-p, and renormalizes. The argmax is
/// always kept.
pub fn apply_sampler<T: Real>(probs: &[T], params: &SamplerParams) -> Result<Vec<T>, SamplingError> {
    if probs.is_empty() {
        return Err(SamplingError::Empty);
    }
    let order = descending(probs);
    let mut keep = vec![false; probs.len()];
    let k = params.top_k.clamp(1, probs.len());
    let top_p = T::c(params.top_p);
    let mut cum = T::zero();
    let mut kept = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        kept.push(i);
        cum += probs[i];
        // Tolerance so a prefix that reaches top_p up to rounding stops here.
        if cum >= top_p - T::c(1e-12) {
            break;
        }
    }
    let max_p = probs[order[0]];
    let floor = T::c(params.min_p) * max_p;
    for (rank, &i) in kept.iter().enumerate() {
        if rank == 0 || probs[i] >= floor {
            keep[i] = true;
        }
    }
    let z: T = probs.iter().zip(&keep).filter(|(_, &k)| k).map(|(&p, _)| p).sum();
    Ok(probs
        .iter()
        .zip(&keep)
        .map(|(&p, &k)| if k && z > T::zero() { p / z } else if k { T::one() } else { T::zero() })
        .collect())
}

pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw.
pub fn sample_index<T: Real, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        let p = p.f64();
        if p <= 0.0 {
            continue;
        }
        last = i;
        cum += p;
        if u < cum {
            return i;
        }
    }
    last
}

/// Top-two probabilities `(p1, p2)`.
pub fn top_two<T: Real>(probs: &[T]) -> (T, T) {
    let mut p1 = T::zero();
    let mut p2 = T::zero();
    for &p in probs {
        if p > p1 {
            p2 = p1;
            p1 = p;
        } else if p > p2 {
            p2 = p;
        }
    }
    (p1, p2)
}
