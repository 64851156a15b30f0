//! Closed-form gradients of `MSE(causal_attention(Q, K, V), Prev)` with
//! respect to K and V, per head.

use super::CriticError;
use crate::model::{softmax_in_place, LayerCache};
use crate::scalar::{dot, min_max, Real};

#[derive(Debug, Clone)]
pub struct AttnGrad<T> {
    pub loss: T,
    /// `[H]` flattened `n × d_h`.
    pub dk: Vec<Vec<T>>,
    pub dv: Vec<Vec<T>>,
}

fn head_forward<T: Real>(q: &[T], k: &[T], v: &[T], n: usize, dh: usize) -> (Vec<T>, Vec<T>) {
    let scale = T::one() / T::c(dh as f64).sqrt();
    let mut a = vec![T::zero(); n * n];
    let mut o = vec![T::zero(); n * dh];
    for i in 0..n {
        let qi = &q[i * dh..(i + 1) * dh];
        let row = &mut a[i * n..i * n + i + 1];
        for (j, s) in row.iter_mut().enumerate() {
            *s = dot(qi, &k[j * dh..(j + 1) * dh]) * scale;
        }
        softmax_in_place(row);
        for j in 0..=i {
            let w = a[i * n + j];
            for e in 0..dh {
                o[i * dh + e] += w * v[j * dh + e];
            }
        }
    }
    (a, o)
}

fn check<T>(q: &[Vec<T>], k: &[Vec<T>], v: &[Vec<T>], prev: &[Vec<T>], n: usize, dh: usize) -> Result<(), CriticError> {
    let h = q.len();
    let shapes_ok = k.len() == h
        && v.len() == h
        && prev.len() == h
        && q.iter().chain(k).chain(v).chain(prev).all(|t| t.len() == n * dh);
    if shapes_ok {
        Ok(())
    } else {
        Err(CriticError::Mismatch("Q/K/V/Prev shapes disagree".into()))
    }
}

/// Loss over the first `rows` query rows only.
pub fn attention_mse_loss<T: Real>(
    q: &[Vec<T>],
    k: &[Vec<T>],
    v: &[Vec<T>],
    prev: &[Vec<T>],
    n: usize,
    dh: usize,
    rows: usize,
) -> Result<T, CriticError> {
    check(q, k, v, prev, n, dh)?;
    let count = T::c((q.len() * rows * dh).max(1) as f64);
    let mut sum = T::zero();
    for h in 0..q.len() {
        let (_, o) = head_forward(&q[h], &k[h], &v[h], n, dh);
        for (x, p) in o[..rows * dh].iter().zip(&prev[h][..rows * dh]) {
            sum += (*x - *p) * (*x - *p);
        }
    }
    Ok(sum / count)
}

pub fn attention_mse_grad<T: Real>(
    q: &[Vec<T>],
    k: &[Vec<T>],
    v: &[Vec<T>],
    prev: &[Vec<T>],
    n: usize,
    dh: usize,
    rows: usize,
) -> Result<AttnGrad<T>, CriticError> {
    check(q, k, v, prev, n, dh)?;
    let heads = q.len();
    let count = T::c((heads * rows * dh).max(1) as f64);
    let two = T::c(2.0);
    let scale = T::one() / T::c(dh as f64).sqrt();
    let mut loss = T::zero();
    let mut dk_all = Vec::with_capacity(heads);
    let mut dv_all = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (&q[h], &k[h], &v[h]);
        let (a, o) = head_forward(qh, kh, vh, n, dh);
        let mut d_o = vec![T::zero(); n * dh];
        for idx in 0..rows * dh {
            let r = o[idx] - prev[h][idx];
            loss += r * r;
            d_o[idx] = two * r / count;
        }
        let mut dk = vec![T::zero(); n * dh];
        let mut dv = vec![T::zero(); n * dh];
        let mut da = vec![T::zero(); n];
        for i in 0..rows {
            let doi = &d_o[i * dh..(i + 1) * dh];
            let ai = &a[i * n..i * n + i + 1];
            for j in 0..=i {
                da[j] = dot(doi, &vh[j * dh..(j + 1) * dh]);
                for e in 0..dh {
                    dv[j * dh + e] += ai[j] * doi[e];
                }
            }
            let inner: T = (0..=i).map(|j| ai[j] * da[j]).sum();
            let qi = &qh[i * dh..(i + 1) * dh];
            for j in 0..=i {
                let ds = ai[j] * (da[j] - inner) * scale;
                for e in 0..dh {
                    dk[j * dh + e] += ds * qi[e];
                }
            }
        }
        dk_all.push(dk);
        dv_all.push(dv);
    }
    Ok(AttnGrad { loss: loss / count, dk: dk_all, dv: dv_all })
}

/// `I(i) = Σ_h (|dK_{h,i}|₁ + |dV_{h,i}|₁)`, min-max normalized. The newest
/// row has no earlier output to compare against and is left out of the loss.
pub fn grad_importance<T: Real>(
    q: &[Vec<T>],
    k: &[Vec<T>],
    v: &[Vec<T>],
    prev: &[Vec<T>],
    n: usize,
    dh: usize,
) -> Result<(Vec<T>, bool), CriticError> {
    if n == 0 {
        return Err(CriticError::EmptyCache);
    }
    let g = attention_mse_grad(q, k, v, prev, n, dh, n - 1)?;
    let mut raw = vec![T::zero(); n];
    for h in 0..q.len() {
        for (i, r) in raw.iter_mut().enumerate() {
            for e in 0..dh {
                *r += g.dk[h][i * dh + e].abs() + g.dv[h][i * dh + e].abs();
            }
        }
    }
    Ok(min_max(&raw))
}

/// Scores a cache layer against the attention outputs stored when each
/// token was processed.
pub fn grad_importance_layer<T: Real>(lc: &LayerCache<T>, dh: usize) -> Result<(Vec<T>, bool), CriticError> {
    grad_importance(&lc.queries, &lc.keys, &lc.values, &lc.outputs, lc.len(), dh)
}
