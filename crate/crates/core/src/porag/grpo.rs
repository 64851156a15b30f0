use crate::scalar::{norm2, Real};

use super::{GrpoConfig, PoragError};

/// Variance guard inside the group standard deviation.
pub const ADV_EPS: f64 = 1e-8;

/// `(α·fid + β·qual, clip(combined, ±c1)·γ_scale)`.
pub fn composite_reward(fidelity: f64, quality: f64, cfg: &GrpoConfig) -> (f64, f64) {
    let combined = cfg.alpha * fidelity + cfg.beta * quality;
    (combined, combined.clamp(-cfg.c1, cfg.c1) * cfg.gamma_scale)
}

/// Population mean and a σ clamped below by `sigma_min`.
pub fn group_advantages<T: Real>(rewards: &[T], sigma_min: T) -> Result<Vec<T>, PoragError> {
    let g = rewards.len();
    if g < 2 {
        return Err(PoragError::GroupTooSmall(g));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![T::zero(); g]);
    }
    let n = T::c(g as f64);
    let mu = rewards.iter().copied().sum::<T>() / n;
    let var = rewards.iter().map(|&r| (r - mu) * (r - mu)).sum::<T>() / n;
    let sigma = (var + T::c(ADV_EPS)).sqrt().max(sigma_min);
    Ok(rewards.iter().map(|&r| (r - mu) / sigma).collect())
}

pub fn prob_ratio<T: Real>(logp_new: T, logp_old: T) -> T {
    (logp_new - logp_old).exp()
}

/// `min(r·Â, clip(r, 1−ε, 1+ε)·Â)`.
pub fn clipped_term<T: Real>(ratio: T, adv: T, eps: T) -> T {
    let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
    (ratio * adv).min(clipped * adv)
}

/// Token mean within each candidate, then mean over candidates.
pub fn clipped_surrogate<T: Real>(ratios: &[Vec<T>], advantages: &[T], eps: T) -> Result<T, PoragError> {
    if ratios.len() != advantages.len() || ratios.is_empty() {
        return Err(PoragError::Shape(format!("{} ratio rows vs {} advantages", ratios.len(), advantages.len())));
    }
    let mut total = T::zero();
    for (row, &a) in ratios.iter().zip(advantages) {
        if row.is_empty() {
            return Err(PoragError::EmptyCandidate);
        }
        total += row.iter().map(|&r| clipped_term(r, a, eps)).sum::<T>() / T::c(row.len() as f64);
    }
    Ok(total / T::c(ratios.len() as f64))
}

/// `u − ln u − 1` with `u = exp(logp_ref − logp_cur)`, written through the log
/// difference so it stays non-negative in floating point.
pub fn kl_term<T: Real>(logp_ref: T, logp_cur: T) -> T {
    let x = logp_ref - logp_cur;
    (x.exp_m1() - x).max(T::zero())
}

/// Mean of per-token terms over all tokens of all candidates, averaging
/// inside each candidate first.
pub fn kl_unbiased<T: Real>(logp_ref: &[Vec<T>], logp_cur: &[Vec<T>]) -> Result<T, PoragError> {
    if logp_ref.len() != logp_cur.len() || logp_ref.is_empty() {
        return Err(PoragError::Shape("reference and current groups differ".into()));
    }
    let mut total = T::zero();
    for (r, c) in logp_ref.iter().zip(logp_cur) {
        if r.len() != c.len() {
            return Err(PoragError::Shape(format!("{} vs {} tokens", r.len(), c.len())));
        }
        if r.is_empty() {
            return Err(PoragError::EmptyCandidate);
        }
        total += r.iter().zip(c).map(|(&a, &b)| kl_term(a, b)).sum::<T>() / T::c(r.len() as f64);
    }
    Ok(total / T::c(logp_ref.len() as f64))
}

pub fn grpo_objective<T: Real>(l_clip: T, kl: T, omega1: T, omega2: T) -> T {
    omega1 * l_clip - omega2 * kl
}

/// Elementwise clip to `±c_value`, then scale down to norm `c_norm` if larger.
pub fn clip_and_normalize_grads<T: Real>(grad: &[T], c_value: T, c_norm: T) -> Vec<T> {
    let mut g: Vec<T> = grad.iter().map(|&x| x.max(-c_value).min(c_value)).collect();
    let n = norm2(&g);
    if n > c_norm && n > T::zero() {
        let s = c_norm / n;
        for x in &mut g {
            *x *= s;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_examples() {
        let cfg = GrpoConfig::default();
        assert!((composite_reward(1.0, 0.0, &cfg).0 - 0.7).abs() < 1e-12);
        assert_eq!(composite_reward(0.0, 0.0, &cfg), (0.0, 0.0));
        let (c, f) = composite_reward(15.0, 15.0, &cfg);
        assert!((c - 15.0).abs() < 1e-12);
        assert_eq!(f, 10.0);
    }

    #[test]
    fn advantages_examples() {
        let a = group_advantages(&[1.0f64; 4], 0.1).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
        // 0.1 * 7 / 7 is not exactly 0.1 in floating point.
        assert!(group_advantages(&[0.1f64; 7], 0.1).unwrap().iter().all(|&x| x == 0.0));
        let a = group_advantages(&[2.0f64, 0.0], 0.1).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-7 && (a[1] + 1.0).abs() < 1e-7);
        assert!(group_advantages(&[1.0f64], 0.1).is_err());
    }

    #[test]
    fn ratio_and_clip_examples() {
        assert_eq!(prob_ratio(-1.3f64, -1.3), 1.0);
        assert!((prob_ratio(2f64.ln(), 0.0) - 2.0).abs() < 1e-12);
        assert!((clipped_term(2.0f64, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_term(0.5f64, -1.0, 0.2) + 0.8).abs() < 1e-12);
        let l = clipped_surrogate(&[vec![1.0f64, 1.0], vec![1.0]], &[0.5, -0.1], 0.2).unwrap();
        assert!((l - 0.2).abs() < 1e-12);
        assert!(clipped_surrogate(&[vec![]], &[1.0f64], 0.2).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_unbiased(&[vec![-0.5f64, -2.0]], &[vec![-0.5, -2.0]]).unwrap(), 0.0);
        let v = kl_term(2f64.ln(), 0.0);
        assert!((v - (1.0 - 2f64.ln())).abs() < 1e-12);
        assert!((v - 0.30685).abs() < 1e-5);
    }

    #[test]
    fn objective_examples() {
        assert_eq!(grpo_objective(0.0f64, 0.0, 100.0, 0.1), 0.0);
        assert!((grpo_objective(0.01f64, 0.1, 100.0, 0.1) - 0.99).abs() < 1e-12);
    }

    #[test]
    fn grad_clipping() {
        let g = clip_and_normalize_grads(&[5.0f64, 0.0], 3.0, 10.0);
        assert_eq!(g, vec![3.0, 0.0]);
        let g = clip_and_normalize_grads(&[2.0f64, 0.0], 3.0, 1.0);
        assert!((norm2(&g) - 1.0).abs() < 1e-12);
        assert_eq!(clip_and_normalize_grads(&[0.0f64; 3], 3.0, 1.0), vec![0.0; 3]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kl_nonnegative(a in proptest::collection::vec(-20.0f64..0.0, 1..8), shift in -3.0f64..3.0) {
                let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift * (i as f64 * 0.37).sin()).collect();
                let kl = kl_unbiased(&[a.clone()], &[b]).unwrap();
                prop_assert!(kl >= 0.0);
                prop_assert_eq!(kl_unbiased(&[a.clone()], &[a]).unwrap(), 0.0);
            }

            #[test]
            fn advantages_centered(r in proptest::collection::vec(-5.0f64..5.0, 2..9)) {
                let adv = group_advantages(&r, 1e-6).unwrap();
                let mean: f64 = adv.iter().sum::<f64>() / adv.len() as f64;
                prop_assert!(mean.abs() < 1e-9);
            }
        }
    }
}
