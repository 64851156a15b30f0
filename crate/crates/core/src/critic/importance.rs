use super::{CriticError, ImportanceWeights};
use crate::model::{row_entropy, LayerAttention, StepTrace};
use crate::scalar::{min_max, Real};

/// Attention received by each cached token: `Σ_h Σ_a |A[h][a][b]|`,
/// min-max normalized. Returns the degenerate flag alongside.
pub fn attn_importance_layer<T: Real>(la: &LayerAttention<T>) -> Result<(Vec<T>, bool), CriticError> {
    let n = la.len();
    if n == 0 {
        return Err(CriticError::EmptyCache);
    }
    let mut strength = vec![T::zero(); n];
    for rows in &la.heads {
        for r in rows {
            for (s, &a) in strength.iter_mut().zip(r.w.iter()) {
                *s += a.abs();
            }
        }
    }
    Ok(min_max(&strength))
}

pub fn attn_importance<T: Real>(trace: &StepTrace<T>, layer: usize) -> Result<(Vec<T>, bool), CriticError> {
    attn_importance_layer(&trace.attention[layer])
}

/// Entropy of each token's own attention row, averaged over heads, then
/// min-max normalized.
pub fn entropy_importance_layer<T: Real>(la: &LayerAttention<T>) -> Result<(Vec<T>, bool), CriticError> {
    let n = la.len();
    if n == 0 {
        return Err(CriticError::EmptyCache);
    }
    let h = T::c(la.num_heads() as f64);
    let raw: Vec<T> = (0..n)
        .map(|a| la.heads.iter().map(|rows| row_entropy(&rows[a].w)).sum::<T>() / h)
        .collect();
    Ok(min_max(&raw))
}

pub fn entropy_importance<T: Real>(trace: &StepTrace<T>, layer: usize) -> Result<(Vec<T>, bool), CriticError> {
    entropy_importance_layer(&trace.attention[layer])
}

/// Weighted sum of the three scores, renormalized to [0, 1].
pub fn hybrid_importance<T: Real>(
    w: &ImportanceWeights,
    i_attn: &[T],
    i_entropy: &[T],
    i_grad: &[T],
) -> Result<Vec<T>, CriticError> {
    w.validate()?;
    if i_attn.len() != i_entropy.len() || i_attn.len() != i_grad.len() {
        return Err(CriticError::Mismatch(format!(
            "scores of length {}, {}, {}",
            i_attn.len(),
            i_entropy.len(),
            i_grad.len()
        )));
    }
    let (wa, we, wg) = (T::c(w.w_attn), T::c(w.w_entropy), T::c(w.w_grad));
    let raw: Vec<T> = (0..i_attn.len()).map(|i| wa * i_attn[i] + we * i_entropy[i] + wg * i_grad[i]).collect();
    Ok(min_max(&raw).0)
}
