use std::collections::HashSet;

use serde::Serialize;

use super::mlag::semantic_filter;
use super::AtlasError;
use crate::model::{StepTrace, TokenId, Vocab};
use crate::scalar::{cosine, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelevanceScore<T> {
    pub atten: T,
    pub rep: T,
    pub combined: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrpCandidate<T> {
    pub position: usize,
    pub token: TokenId,
    pub score: RelevanceScore<T>,
}

/// Piecewise layer weight for 1-based layer `l` of `L`.
pub fn psi<T: Real>(l: usize, num_layers: usize) -> T {
    let l = l as f64;
    let third = num_layers as f64 / 3.0;
    let v = if l < third {
        0.2 * l / third
    } else if l < 2.0 * third {
        0.5 * (l - third) / third
    } else {
        0.3 * (num_layers as f64 - l) / third
    };
    T::c(v)
}

/// `Σ_l ψ_l · (1/H) Σ_h A_{l,h,i,j}` for `j < i`.
pub fn atten_score<T: Real>(trace: &StepTrace<T>, i: usize, j: usize) -> Result<T, AtlasError> {
    if j >= i {
        return Err(AtlasError::NotPreceding { i, j });
    }
    let l_total = trace.num_layers();
    let mut acc = T::zero();
    for (l, la) in trace.attention.iter().enumerate() {
        let h = la.num_heads();
        let mean: T = (0..h).map(|hh| la.weight_at(hh, i, j)).sum::<T>() / T::c(h as f64);
        acc += psi::<T>(l + 1, l_total) * mean;
    }
    Ok(acc)
}

/// `δ_l = softmax_l(l / τ)` over layers `1..=L`.
pub fn layer_softmax_weights<T: Real>(num_layers: usize, tau: T) -> Vec<T> {
    let mut w: Vec<T> = (1..=num_layers).map(|l| T::c(l as f64) / tau).collect();
    crate::model::softmax_in_place(&mut w);
    w
}

/// `e_j = Σ_l δ_l · h_{l,j}` over the transformer layers (embeddings excluded).
pub fn context_embedding<T: Real>(trace: &StepTrace<T>, j: usize, tau: T) -> Vec<T> {
    let l_total = trace.num_layers();
    let delta = layer_softmax_weights(l_total, tau);
    let d = trace.hidden(0, j).len();
    let mut e = vec![T::zero(); d];
    for (l, &w) in delta.iter().enumerate() {
        for (a, &b) in e.iter_mut().zip(trace.hidden(l + 1, j)) {
            *a += w * b;
        }
    }
    e
}

pub fn relevance_score<T: Real>(atten: T, rep: T, beta: T) -> RelevanceScore<T> {
    RelevanceScore { atten, rep, combined: beta * atten + (T::one() - beta) * rep }
}

/// Top-`k` by score, ties to the later position, returned in sequence order.
pub fn select_query_tokens<T: Real>(scored: &[(usize, T)], k: usize) -> Vec<usize> {
    let mut v: Vec<(usize, T)> = scored.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(b.0.cmp(&a.0)));
    let mut out: Vec<usize> = v.into_iter().take(k).map(|(p, _)| p).collect();
    out.sort_unstable();
    out
}

/// Scores every semantically meaningful position before `i`.
pub fn lrp_candidates<T: Real>(
    trace: &StepTrace<T>,
    i: usize,
    vocab: &Vocab,
    stopwords: &HashSet<String>,
    beta: T,
    tau: T,
) -> Result<Vec<LrpCandidate<T>>, AtlasError> {
    let e_i = context_embedding(trace, i, tau);
    let mut out = Vec::new();
    for j in 0..i {
        let tok = trace.tokens[j];
        if !semantic_filter(tok, vocab, stopwords)? {
            continue;
        }
        let atten = atten_score(trace, i, j)?;
        let rep = cosine(&context_embedding(trace, j, tau), &e_i);
        out.push(LrpCandidate { position: j, token: tok, score: relevance_score(atten, rep, beta) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn psi_examples() {
        assert!((psi::<f64>(1, 6) - 0.1).abs() < 1e-12);
        assert!((psi::<f64>(3, 6) - 0.25).abs() < 1e-12);
        assert!((psi::<f64>(6, 6)).abs() < 1e-12);
    }

    #[test]
    fn delta_examples() {
        let d = layer_softmax_weights::<f64>(2, 2.0);
        assert!((d[1] - 0.62246).abs() < 1e-5);
        let flat = layer_softmax_weights::<f64>(4, 1e9);
        assert!(flat.iter().all(|&w| (w - 0.25).abs() < 1e-9));
    }

    #[test]
    fn relevance_examples() {
        assert!((relevance_score(1.0f64, 0.0, 0.7).combined - 0.7).abs() < 1e-12);
        assert!((relevance_score(0.0f64, 1.0, 0.7).combined - 0.3).abs() < 1e-12);
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_query_tokens(&[(2, 0.9f64), (5, 0.1), (7, 0.8)], 2), vec![2, 7]);
        assert_eq!(select_query_tokens(&[(1, 0.5f64), (4, 0.5), (3, 0.5)], 1), vec![4]);
        assert_eq!(select_query_tokens(&[(3, 0.1f64), (1, 0.2)], 9), vec![1, 3]);
    }

    fn oracle(scored: &[(usize, f64)], k: usize) -> Vec<usize> {
        // Exhaustive: a position is chosen iff fewer than k others beat it.
        let beats = |a: &(usize, f64), b: &(usize, f64)| a.1 > b.1 || (a.1 == b.1 && a.0 > b.0);
        let mut out: Vec<usize> = scored
            .iter()
            .filter(|c| scored.iter().filter(|o| beats(o, c)).count() < k)
            .map(|c| c.0)
            .collect();
        out.sort_unstable();
        out
    }

    proptest! {
        #[test]
        fn selection_matches_oracle(
            scores in proptest::collection::vec(0u8..6, 0..32),
            k in 1usize..10,
        ) {
            let scored: Vec<(usize, f64)> = scores.iter().enumerate().map(|(p, &s)| (p * 2 + 1, s as f64 / 5.0)).collect();
            let got = select_query_tokens(&scored, k);
            prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(got.len() <= k);
            prop_assert_eq!(got, oracle(&scored, k));
        }
    }
}
