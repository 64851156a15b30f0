//! Per-step introspection record.

use std::sync::Arc;

use crate::scalar::{Real, LOG_EPS};

use super::vocab::TokenId;

/// One attention row (a query position attending over cached keys). Entries
/// beyond `w.len()` are zero. `total` and `entropy` are cached summaries.
#[derive(Debug, Clone)]
pub struct AttnRow<T> {
    pub w: Arc<[T]>,
    pub total: T,
    pub entropy: T,
}

impl<T: Real> AttnRow<T> {
    pub fn new(w: Vec<T>) -> Self {
        let total = w.iter().copied().sum();
        let entropy = row_entropy(&w);
        Self { w: w.into(), total, entropy }
    }

    #[inline]
    pub fn get(&self, k: usize) -> T {
        self.w.get(k).copied().unwrap_or_else(T::zero)
    }

    /// Sum of entries at indices `< end`.
    pub fn prefix_sum(&self, end: usize) -> T {
        if end >= self.w.len() {
            self.total
        } else {
            self.w[..end].iter().copied().sum()
        }
    }
}

/// `-Σ w log(w + ε)` in nats.
pub fn row_entropy<T: Real>(w: &[T]) -> T {
    let eps = T::c(LOG_EPS);
    let mut h = T::zero();
    for &a in w {
        h -= a * (a + eps).ln();
    }
    h
}

/// Attention of one layer: `heads[h][a]` is the row of the `a`-th cached
/// token, indexed in the same order as `positions`.
#[derive(Debug, Clone)]
pub struct LayerAttention<T> {
    pub positions: Vec<usize>,
    pub heads: Vec<Vec<AttnRow<T>>>,
}

impl<T: Real> LayerAttention<T> {
    pub fn empty(num_heads: usize) -> Self {
        Self { positions: Vec::new(), heads: vec![Vec::new(); num_heads] }
    }

    /// Builds a layer from dense `[H][n][n]` matrices. Positions are `0..n`.
    pub fn from_dense(mats: &[Vec<Vec<T>>]) -> Self {
        let n = mats.first().map_or(0, |m| m.len());
        Self {
            positions: (0..n).collect(),
            heads: mats
                .iter()
                .map(|m| m.iter().map(|r| AttnRow::new(r.clone())).collect())
                .collect(),
        }
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn index_of(&self, pos: usize) -> Option<usize> {
        self.positions.binary_search(&pos).ok()
    }

    /// Weight by cache index.
    pub fn weight(&self, h: usize, row: usize, col: usize) -> T {
        self.heads[h][row].get(col)
    }

    /// Weight by original position; zero if either position was evicted.
    pub fn weight_at(&self, h: usize, from: usize, to: usize) -> T {
        match (self.index_of(from), self.index_of(to)) {
            (Some(a), Some(b)) => self.weight(h, a, b),
            _ => T::zero(),
        }
    }

    pub fn dense(&self, h: usize) -> Vec<Vec<T>> {
        let n = self.len();
        self.heads[h]
            .iter()
            .map(|r| (0..n).map(|k| r.get(k)).collect())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct StepTrace<T> {
    pub tokens: Vec<TokenId>,
    /// Logits of the last processed position.
    pub logits: Vec<T>,
    /// Final normalized hidden state of the last position (output-head input).
    pub final_hidden: Vec<T>,
    pub attention: Vec<LayerAttention<T>>,
    /// `hidden_by_pos[j][l]`; `l = 0` is the embedding layer.
    pub hidden_by_pos: Vec<Arc<[Arc<[T]>]>>,
    /// Key and value rows of the last processed position, per layer.
    pub new_kv: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> StepTrace<T> {
    pub fn num_layers(&self) -> usize {
        self.attention.len()
    }

    pub fn num_heads(&self) -> usize {
        self.attention.first().map_or(0, |a| a.num_heads())
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn last_position(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }

    /// Hidden state after layer `l` (0 = embeddings) at position `j`.
    pub fn hidden(&self, l: usize, j: usize) -> &[T] {
        &self.hidden_by_pos[j][l]
    }

    /// Builds a trace from explicit attention matrices and hidden states, for
    /// fixtures that do not come from a model run.
    pub fn from_parts(
        tokens: Vec<TokenId>,
        attention: Vec<LayerAttention<T>>,
        hidden: Vec<Vec<Vec<T>>>,
    ) -> Self {
        let hidden_by_pos = hidden
            .into_iter()
            .map(|layers| layers.into_iter().map(Arc::from).collect::<Vec<_>>().into())
            .collect();
        Self {
            tokens,
            logits: Vec::new(),
            final_hidden: Vec::new(),
            attention,
            hidden_by_pos,
            new_kv: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_row_entropy_is_ln_n() {
        let n = 8;
        let r = AttnRow::new(vec![1.0f64 / n as f64; n]);
        assert!((r.entropy - (n as f64).ln()).abs() < 1e-8);
        assert!((r.total - 1.0).abs() < 1e-12);
        assert_eq!(r.get(20), 0.0);
    }

    #[test]
    fn prefix_sums() {
        let r = AttnRow::new(vec![0.1f64, 0.2, 0.7]);
        assert!((r.prefix_sum(2) - 0.3).abs() < 1e-12);
        assert!((r.prefix_sum(9) - 1.0).abs() < 1e-12);
    }
}
