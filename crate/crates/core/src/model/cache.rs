//! Key/value cache with original position indices.

use std::sync::Arc;

use crate::scalar::Real;

use super::trace::{AttnRow, LayerAttention};
use super::vocab::TokenId;
use super::ModelError;

/// Per-layer retained rows. Every `[H]` tensor is flattened `n × d_h`.
#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    pub keys: Vec<Vec<T>>,
    pub values: Vec<Vec<T>>,
    pub queries: Vec<Vec<T>>,
    /// Attention output of each cached token as computed when it was
    /// processed; the reference for the gradient importance scorer.
    pub outputs: Vec<Vec<T>>,
    pub attn: LayerAttention<T>,
}

impl<T: Real> LayerCache<T> {
    fn new(num_heads: usize) -> Self {
        Self {
            keys: vec![Vec::new(); num_heads],
            values: vec![Vec::new(); num_heads],
            queries: vec![Vec::new(); num_heads],
            outputs: vec![Vec::new(); num_heads],
            attn: LayerAttention::empty(num_heads),
        }
    }

    pub fn len(&self) -> usize {
        self.attn.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attn.positions.is_empty()
    }

    pub fn positions(&self) -> &[usize] {
        &self.attn.positions
    }

    /// Keeps only the cache indices in `keep` (strictly increasing). Stored
    /// attention rows are restricted to the kept columns and renormalized,
    /// which equals the softmax over the kept subset.
    pub fn retain(&mut self, keep: &[usize], head_dim: usize) {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let gather = |src: &Vec<T>| -> Vec<T> {
            let mut out = Vec::with_capacity(keep.len() * head_dim);
            for &a in keep {
                out.extend_from_slice(&src[a * head_dim..(a + 1) * head_dim]);
            }
            out
        };
        for h in 0..self.keys.len() {
            self.keys[h] = gather(&self.keys[h]);
            self.values[h] = gather(&self.values[h]);
            self.queries[h] = gather(&self.queries[h]);
            self.outputs[h] = gather(&self.outputs[h]);
            let rows = &self.attn.heads[h];
            let new_rows: Vec<AttnRow<T>> = keep
                .iter()
                .map(|&a| {
                    let old = &rows[a];
                    let mut w: Vec<T> = keep
                        .iter()
                        .take_while(|&&b| b < old.w.len())
                        .map(|&b| old.w[b])
                        .collect();
                    let s: T = w.iter().copied().sum();
                    if s > T::zero() {
                        for v in &mut w {
                            *v /= s;
                        }
                    }
                    AttnRow::new(w)
                })
                .collect();
            self.attn.heads[h] = new_rows;
        }
        self.attn.positions = keep.iter().map(|&a| self.attn.positions[a]).collect();
    }
}

#[derive(Debug, Clone)]
pub struct KvCache<T> {
    pub layers: Vec<LayerCache<T>>,
    pub tokens: Vec<TokenId>,
    /// `hidden[j][l]` for every processed position, evicted or not.
    pub hidden: Vec<Arc<[Arc<[T]>]>>,
    pub total_processed: usize,
    /// Keys scored against a query, summed over layers and heads.
    pub dot_products: u64,
    pub last_logits: Vec<T>,
    pub last_final_hidden: Vec<T>,
    pub last_kv: Vec<(Vec<T>, Vec<T>)>,
    pub(crate) num_heads: usize,
    pub(crate) head_dim: usize,
}

impl<T: Real> KvCache<T> {
    pub fn new(num_layers: usize, num_heads: usize, head_dim: usize) -> Self {
        Self {
            layers: (0..num_layers).map(|_| LayerCache::new(num_heads)).collect(),
            tokens: Vec::new(),
            hidden: Vec::new(),
            total_processed: 0,
            dot_products: 0,
            last_logits: Vec::new(),
            last_final_hidden: Vec::new(),
            last_kv: Vec::new(),
            num_heads,
            head_dim,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    /// Largest retained count over layers.
    pub fn n_kept(&self) -> usize {
        self.layers.iter().map(LayerCache::len).max().unwrap_or(0)
    }

    /// Resident key+value bytes.
    pub fn memory_bytes(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 2 * self.num_heads * l.len() * self.head_dim * T::BYTES)
            .sum()
    }

    pub fn retain(&mut self, layer: usize, keep: &[usize]) -> Result<(), ModelError> {
        let lc = self
            .layers
            .get_mut(layer)
            .ok_or_else(|| ModelError::CacheMismatch(format!("no layer {layer}")))?;
        if keep.iter().any(|&a| a >= lc.len()) || keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::CacheMismatch("keep set out of range or unsorted".into()));
        }
        lc.retain(keep, self.head_dim);
        Ok(())
    }

    /// Checks the structural invariants: per-layer lengths agree, positions
    /// strictly increase and never exceed the processed count.
    pub fn check(&self) -> Result<(), ModelError> {
        for (l, lc) in self.layers.iter().enumerate() {
            let n = lc.len();
            let bad = lc.keys.iter().chain(&lc.values).any(|t| t.len() != n * self.head_dim)
                || lc.attn.heads.iter().any(|r| r.len() != n)
                || lc.positions().windows(2).any(|w| w[0] >= w[1])
                || n > self.total_processed;
            if bad {
                return Err(ModelError::CacheMismatch(format!("layer {l} inconsistent")));
            }
        }
        Ok(())
    }
}
