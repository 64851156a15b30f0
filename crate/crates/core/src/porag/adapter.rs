use crate::model::rng::uniform;
use crate::model::TokenId;
use crate::scalar::{dot, Real};

use super::grpo::{clipped_term, kl_term};
use super::{GrpoConfig, PoragError};

/// Low-rank correction on the output head: `logits = W·h + B·(A·h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams<T> {
    pub rank: usize,
    pub d: usize,
    pub vocab: usize,
    /// `[rank][d]`.
    pub a: Vec<T>,
    /// `[vocab][rank]`.
    pub b: Vec<T>,
}

/// One generated token: the frozen head's logits, the hidden state that
/// produced them, and the sampled token.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep<T> {
    pub base_logits: Vec<T>,
    pub hidden: Vec<T>,
    pub token: TokenId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts<T> {
    pub j: T,
    pub l_clip: T,
    pub kl: T,
}

impl<T: Real> AdapterParams<T> {
    /// Random `A`, zero `B`, so the adapted head starts equal to the base.
    pub fn init(rank: usize, d: usize, vocab: usize, seed: u64) -> Result<Self, PoragError> {
        if rank == 0 || rank > d.min(vocab) {
            return Err(PoragError::InvalidConfig(format!("rank {rank} outside [1, {}]", d.min(vocab))));
        }
        let s = 3f64.sqrt() / (d as f64).sqrt();
        let a = (0..(rank * d) as u64).map(|i| T::c(uniform(seed, 200, i) * s)).collect();
        Ok(Self { rank, d, vocab, a, b: vec![T::zero(); vocab * rank] })
    }

    pub fn project(&self, h: &[T]) -> Vec<T> {
        (0..self.rank).map(|r| dot(&self.a[r * self.d..(r + 1) * self.d], h)).collect()
    }

    pub fn logits(&self, base_logits: &[T], h: &[T]) -> Vec<T> {
        let ah = self.project(h);
        base_logits
            .iter()
            .enumerate()
            .map(|(v, &z)| z + dot(&self.b[v * self.rank..(v + 1) * self.rank], &ah))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// `[A, B]` flattened.
    pub fn flat(&self) -> Vec<T> {
        let mut v = self.a.clone();
        v.extend_from_slice(&self.b);
        v
    }

    pub fn set_flat(&mut self, v: &[T]) -> Result<(), PoragError> {
        if v.len() != self.n_params() {
            return Err(PoragError::Shape(format!("adapter needs {} values, got {}", self.n_params(), v.len())));
        }
        let na = self.a.len();
        self.a.copy_from_slice(&v[..na]);
        self.b.copy_from_slice(&v[na..]);
        Ok(())
    }

    /// `θ ← θ + η·g` on the flattened parameters.
    pub fn ascend(&mut self, g: &[T], eta: T) {
        let na = self.a.len();
        for (p, &d) in self.a.iter_mut().zip(&g[..na]) {
            *p += eta * d;
        }
        for (p, &d) in self.b.iter_mut().zip(&g[na..]) {
            *p += eta * d;
        }
    }
}

fn log_softmax_at<T: Real>(z: &[T], k: usize) -> (T, Vec<T>) {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = z.iter().map(|&v| (v - m).exp()).sum();
    let lse = m + s.ln();
    let p = z.iter().map(|&v| (v - lse).exp()).collect();
    (z[k] - lse, p)
}

/// Per-token log-probabilities of a candidate under the adapted head.
pub fn candidate_log_probs<T: Real>(adapter: &AdapterParams<T>, steps: &[PolicyStep<T>]) -> Vec<T> {
    steps
        .iter()
        .map(|s| log_softmax_at(&adapter.logits(&s.base_logits, &s.hidden), s.token as usize).0)
        .collect()
}

/// `J = ω1·L_clip − ω2·KL` and its gradient with respect to `[A, B]`.
pub fn objective<T: Real>(
    adapter: &AdapterParams<T>,
    cands: &[Vec<PolicyStep<T>>],
    logp_old: &[Vec<T>],
    logp_ref: &[Vec<T>],
    advantages: &[T],
    cfg: &GrpoConfig,
) -> Result<(ObjectiveParts<T>, Vec<T>), PoragError> {
    let g = cands.len();
    if g == 0 || logp_old.len() != g || logp_ref.len() != g || advantages.len() != g {
        return Err(PoragError::Shape("group arrays disagree in length".into()));
    }
    let eps = T::c(cfg.eps_clip);
    let (w1, w2) = (T::c(cfg.omega1), T::c(cfg.omega2));
    let (r, d) = (adapter.rank, adapter.d);
    let mut grad = vec![T::zero(); adapter.n_params()];
    let (ga, gb) = grad.split_at_mut(adapter.a.len());
    let mut l_clip = T::zero();
    let mut kl = T::zero();
    let inv_g = T::one() / T::c(g as f64);
    for i in 0..g {
        let steps = &cands[i];
        if steps.is_empty() {
            return Err(PoragError::EmptyCandidate);
        }
        if logp_old[i].len() != steps.len() || logp_ref[i].len() != steps.len() {
            return Err(PoragError::Shape(format!("candidate {i}: log-prob length mismatch")));
        }
        let w = inv_g / T::c(steps.len() as f64);
        let adv = advantages[i];
        for (t, s) in steps.iter().enumerate() {
            let ah = adapter.project(&s.hidden);
            let z = adapter.logits(&s.base_logits, &s.hidden);
            let (lp, p) = log_softmax_at(&z, s.token as usize);
            let ratio = (lp - logp_old[i][t]).exp();
            let lower = T::one() - eps;
            let upper = T::one() + eps;
            let clipped = ratio.max(lower).min(upper);
            l_clip += w * clipped_term(ratio, adv, eps);
            kl += w * kl_term(logp_ref[i][t], lp);
            // d term / d logp: the unclipped branch is active when it is the min.
            let dclip = if ratio * adv <= clipped * adv { ratio * adv } else { T::zero() };
            let u = (logp_ref[i][t] - lp).exp();
            let c = w * (w1 * dclip + w2 * (u - T::one()));
            // δ = c·(e_y − p) is dJ/dz for this token.
            let mut btd = vec![T::zero(); r];
            for v in 0..adapter.vocab {
                let mut delta = -p[v];
                if v == s.token as usize {
                    delta += T::one();
                }
                delta *= c;
                let brow = &adapter.b[v * r..(v + 1) * r];
                for k in 0..r {
                    gb[v * r + k] += delta * ah[k];
                    btd[k] += brow[k] * delta;
                }
            }
            for k in 0..r {
                for j in 0..d {
                    ga[k * d + j] += btd[k] * s.hidden[j];
                }
            }
        }
    }
    let j = w1 * l_clip - w2 * kl;
    Ok((ObjectiveParts { j, l_clip, kl }, grad))
}
