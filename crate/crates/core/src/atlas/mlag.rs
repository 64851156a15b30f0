use std::collections::HashSet;

use serde::Serialize;

use super::AtlasError;
use crate::model::{StepTrace, TokenId, Vocab};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MlagBreakdown<T> {
    pub gradient_factor: T,
    pub density: T,
    pub filter: bool,
    pub alpha: T,
    pub score: T,
}

impl<T: Real> MlagBreakdown<T> {
    pub fn new(gradient_factor: T, density: T, filter: bool, alpha: T) -> Self {
        let s = if filter { T::one() } else { T::zero() };
        Self { gradient_factor, density, filter, alpha, score: alpha * gradient_factor * density * s }
    }

    pub fn triggers(&self, theta: T) -> bool {
        self.score > theta
    }
}

/// Attention mass that row `m` of `layer` puts on positions before `i`,
/// summed over heads, normalized by the largest such mass among rows at
/// positions `<= i`. Causal rows cannot attend forward, so this is the
/// column-side reading of the per-token average; see the project notes.
pub fn normalized_avg_attention<T: Real>(trace: &StepTrace<T>, layer: usize, i: usize) -> T {
    if i == 0 {
        return T::zero();
    }
    let la = &trace.attention[layer];
    let Some(row_i) = la.index_of(i) else {
        return T::zero();
    };
    let cols = la.positions.partition_point(|&p| p < i);
    let rows = la.positions.partition_point(|&p| p <= i);
    let raw = |m: usize| -> T { la.heads.iter().map(|h| h[m].prefix_sum(cols)).sum() };
    let mut max = T::zero();
    for m in 0..rows {
        max = max.max(raw(m));
    }
    if max <= T::zero() {
        return T::zero();
    }
    (raw(row_i) / max).min(T::one())
}

/// `η_j = j / (L-1)` for 1-based layer `j`.
pub fn layer_coefficient<T: Real>(j: usize, num_layers: usize) -> T {
    T::c(j as f64 / (num_layers as f64 - 1.0))
}

/// `G_i = Σ_{j=1}^{L-1} η_j · |Ā_{j+1,i} - Ā_{j,i}|`.
pub fn gradient_factor<T: Real>(trace: &StepTrace<T>, i: usize) -> Result<T, AtlasError> {
    let l = trace.num_layers();
    if l < 2 {
        return Err(AtlasError::TooFewLayers);
    }
    let a: Vec<T> = (0..l).map(|j| normalized_avg_attention(trace, j, i)).collect();
    Ok(gradient_from_levels(&a))
}

/// The layer-weighted sum of absolute differences over per-layer `Ā` values.
pub fn gradient_from_levels<T: Real>(a: &[T]) -> T {
    let l = a.len();
    (1..l).map(|j| layer_coefficient::<T>(j, l) * (a[j] - a[j - 1]).abs()).sum()
}

/// Per-head entropy of the final layer over the whole causal block,
/// normalized to sum to one; uniform when every entropy is zero.
pub fn head_entropy_importance<T: Real>(trace: &StepTrace<T>) -> Vec<T> {
    let Some(la) = trace.attention.last() else {
        return Vec::new();
    };
    let h = la.num_heads();
    let ents: Vec<T> = la.heads.iter().map(|rows| rows.iter().map(|r| r.entropy).sum()).collect();
    let total: T = ents.iter().copied().sum();
    if total <= T::zero() {
        return vec![T::one() / T::c(h as f64); h];
    }
    ents.into_iter().map(|e| e / total).collect()
}

/// `D_i = (1 - p_i) · Σ_h φ_h · (1/i) Σ_{k<i} A_{L,h,i,k}`.
pub fn info_density<T: Real>(trace: &StepTrace<T>, i: usize, p_i: T, phi: &[T]) -> T {
    if i == 0 {
        return T::zero();
    }
    let Some(la) = trace.attention.last() else {
        return T::zero();
    };
    let Some(row) = la.index_of(i) else {
        return T::zero();
    };
    let cols = la.positions.partition_point(|&p| p < i);
    let n = T::c(i as f64);
    let mut acc = T::zero();
    for (h, rows) in la.heads.iter().enumerate() {
        acc += phi[h] * rows[row].prefix_sum(cols) / n;
    }
    ((T::one() - p_i) * acc).max(T::zero())
}

/// 0 for stopwords, numbers, punctuation and special tokens.
pub fn semantic_filter(id: TokenId, vocab: &Vocab, stopwords: &HashSet<String>) -> Result<bool, AtlasError> {
    let s = vocab.token_str(id).ok_or(AtlasError::UnknownToken(id))?;
    let f = vocab.flags(id).ok_or(AtlasError::UnknownToken(id))?;
    Ok(!(stopwords.contains(s) || f.is_numeric || f.is_punctuation || f.is_special))
}

/// `α = α0 · exp(-λ · clamp(c/c_max, 0, 1))`.
pub fn scaling_factor<T: Real>(alpha0: T, lambda: T, c_current: T, c_max: T) -> Result<T, AtlasError> {
    if !(c_max > T::zero()) {
        return Err(AtlasError::ComputeMax);
    }
    let ratio = (c_current / c_max).max(T::zero()).min(T::one());
    Ok(alpha0 * (-lambda * ratio).exp())
}

pub fn relevance_precheck<T: Real>(p_i: T, tau_p: T, s_i: bool) -> bool {
    p_i < tau_p && s_i
}

pub fn mlag_score<T: Real>(
    trace: &StepTrace<T>,
    i: usize,
    p_i: T,
    s_i: bool,
    alpha: T,
) -> Result<MlagBreakdown<T>, AtlasError> {
    let g = gradient_factor(trace, i)?;
    let phi = head_entropy_importance(trace);
    let d = info_density(trace, i, p_i, &phi);
    Ok(MlagBreakdown::new(g, d, s_i, alpha))
}
