//! Group-relative policy optimization for retrieval-augmented generation:
//! dual reward heads, group advantages, the clipped surrogate with a KL
//! penalty, and a low-rank adapter on the frozen model's output head.

mod adapter;
mod checkpoint;
mod grpo;
mod heads;
mod metrics;
mod train;

use serde::{Deserialize, Serialize};

pub use adapter::{candidate_log_probs, objective, AdapterParams, ObjectiveParts, PolicyStep};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_BIN, CHECKPOINT_JSON};
pub use grpo::{
    clip_and_normalize_grads, clipped_surrogate, clipped_term, composite_reward, group_advantages, grpo_objective,
    kl_term, kl_unbiased, prob_ratio, ADV_EPS,
};
pub use heads::{HeadGrad, RewardHeadParams};
pub use metrics::{
    bow_cosine, exact_match, fidelity_loss, lcs_len, quality_loss, rouge_l, rouge_n, token_f1, FidelityBreakdown,
    QualityBreakdown,
};
pub use train::{load_train_data, parse_train_data, StepMetrics, TrainConfig, TrainItem, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum PoragError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("empty candidate")]
    EmptyCandidate,
    #[error("empty reference")]
    EmptyReference,
    #[error("line {line}: {msg}")]
    Data { line: usize, msg: String },
    #[error("step {step}: non-finite {what}")]
    NonFinite { step: usize, what: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub eps_clip: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c1: f64,
    pub gamma_scale: f64,
    pub sigma_min: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub c_value: f64,
    pub c_norm: f64,
    pub eta_policy: f64,
    pub eta_reward: f64,
    pub group_size: usize,
    pub inner_iters: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            eps_clip: 0.2,
            alpha: 0.7,
            beta: 0.3,
            c1: 10.0,
            gamma_scale: 1.0,
            sigma_min: 0.1,
            omega1: 100.0,
            omega2: 0.1,
            c_value: 3.0,
            c_norm: 1.0,
            eta_policy: 5e-6,
            eta_reward: 5e-5,
            group_size: 4,
            inner_iters: 1,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), PoragError> {
        let positive = [
            ("eps_clip", self.eps_clip),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("c1", self.c1),
            ("gamma_scale", self.gamma_scale),
            ("sigma_min", self.sigma_min),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("c_value", self.c_value),
            ("c_norm", self.c_norm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PoragError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        // Zero learning rates are allowed so a step can run as a no-op.
        for (name, v) in [("eta_policy", self.eta_policy), ("eta_reward", self.eta_reward)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PoragError::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(PoragError::InvalidConfig(format!("alpha + beta must be 1, got {}", self.alpha + self.beta)));
        }
        if !matches!(self.group_size, 2 | 4) {
            return Err(PoragError::InvalidConfig(format!("group_size must be 2 or 4, got {}", self.group_size)));
        }
        if self.inner_iters == 0 {
            return Err(PoragError::InvalidConfig("inner_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        GrpoConfig::default().validate().unwrap();
        let bad = GrpoConfig { beta: 0.4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GrpoConfig { group_size: 3, ..Default::default() };
        assert!(bad.validate().is_err());
        let zero = GrpoConfig { eta_policy: 0.0, eta_reward: 0.0, ..Default::default() };
        zero.validate().unwrap();
    }
}
