use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::toy::render_chat;
use crate::backend::ChatMessage;
use crate::model::rng::splitmix64;
use crate::model::{TokenId, Vocab};
use crate::sampling::{sample_index, softmax_temperature};
use crate::scalar::norm2;
use crate::Model;

use super::adapter::{candidate_log_probs, objective, AdapterParams, PolicyStep};
use super::grpo::{clip_and_normalize_grads, composite_reward, group_advantages};
use super::heads::{HeadGrad, RewardHeadParams};
use super::metrics::{fidelity_loss, quality_loss};
use super::{GrpoConfig, PoragError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainItem {
    pub question: String,
    pub docs: Vec<String>,
    pub answer: String,
}

pub fn parse_train_data(text: &str) -> Result<Vec<TrainItem>, PoragError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: TrainItem =
            serde_json::from_str(line).map_err(|e| PoragError::Data { line: i + 1, msg: e.to_string() })?;
        if item.answer.trim().is_empty() {
            return Err(PoragError::Data { line: i + 1, msg: "empty answer".into() });
        }
        out.push(item);
    }
    Ok(out)
}

pub fn load_train_data(path: &Path) -> Result<Vec<TrainItem>, PoragError> {
    parse_train_data(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub grpo: GrpoConfig,
    pub steps: usize,
    pub adapter_rank: usize,
    pub max_new_tokens: usize,
    /// Sampling temperature for candidate generation.
    pub temperature: f64,
    /// Write a checkpoint every this many steps; 0 writes only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            grpo: GrpoConfig::default(),
            steps: 200,
            adapter_rank: 4,
            max_new_tokens: 6,
            temperature: 1.0,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PoragError> {
        self.grpo.validate()?;
        if self.adapter_rank == 0 {
            return Err(PoragError::InvalidConfig("adapter_rank must be >= 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(PoragError::InvalidConfig("max_new_tokens must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(PoragError::InvalidConfig("temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub j: f64,
    pub l_clip: f64,
    pub kl: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub fidelity_head_loss: f64,
    pub quality_head_loss: f64,
    pub fidelity_target_mean: f64,
    pub quality_target_mean: f64,
    pub policy_grad_norm: f64,
    pub mean_len: f64,
}

struct Sampled {
    steps: Vec<PolicyStep<f64>>,
    h: Vec<f64>,
    text: String,
}

pub struct Trainer {
    pub model: Arc<Model>,
    pub vocab: Vocab,
    pub config: TrainConfig,
    pub seed: u64,
    pub adapter: AdapterParams<f64>,
    pub reference: AdapterParams<f64>,
    pub fidelity_head: RewardHeadParams<f64>,
    pub quality_head: RewardHeadParams<f64>,
    /// Completed steps.
    pub step: usize,
    pub base_checksum: String,
}

fn add_scaled(acc: &mut HeadGrad<f64>, g: &HeadGrad<f64>, s: f64) {
    for (a, b) in acc.w1.iter_mut().zip(&g.w1) {
        *a += s * b;
    }
    for (a, b) in acc.b1.iter_mut().zip(&g.b1) {
        *a += s * b;
    }
    for (a, b) in acc.w2.iter_mut().zip(&g.w2) {
        *a += s * b;
    }
    acc.b2 += s * g.b2;
}

fn zero_grad(d: usize) -> HeadGrad<f64> {
    HeadGrad { w1: vec![0.0; d * d], b1: vec![0.0; d], w2: vec![0.0; d], b2: 0.0 }
}

impl Trainer {
    pub fn new(model: Arc<Model>, config: TrainConfig, seed: u64) -> Result<Self, PoragError> {
        config.validate()?;
        let d = model.config.model_dim;
        let v = model.config.vocab_size;
        if config.max_new_tokens + 2 > model.config.max_seq {
            return Err(PoragError::InvalidConfig("max_new_tokens leaves no room for a prompt".into()));
        }
        let adapter = AdapterParams::init(config.adapter_rank, d, v, seed)?;
        let mut fidelity_head = RewardHeadParams::init(d, seed, 300);
        let mut quality_head = RewardHeadParams::init(d, seed, 400);
        // Output layers start at zero so both heads begin by predicting 0.
        fidelity_head.w2.fill(0.0);
        quality_head.w2.fill(0.0);
        Ok(Self {
            vocab: Vocab::for_size(v),
            base_checksum: model.checksum(),
            reference: adapter.clone(),
            model,
            config,
            seed,
            adapter,
            fidelity_head,
            quality_head,
            step: 0,
        })
    }

    /// Fails if the frozen weights changed since construction.
    pub fn verify_base(&self) -> Result<(), PoragError> {
        if self.model.checksum() != self.base_checksum {
            return Err(PoragError::Checkpoint("base weights changed".into()));
        }
        Ok(())
    }

    pub fn prompt(&self, item: &TrainItem) -> Vec<TokenId> {
        let messages = [
            ChatMessage::system(format!("context : {}", item.docs.join(" "))),
            ChatMessage::user(item.question.clone()),
        ];
        let mut toks = self.vocab.encode(&render_chat(&messages));
        let room = self.model.config.max_seq - self.config.max_new_tokens - 1;
        if toks.len() > room {
            toks.drain(..toks.len() - room);
        }
        toks
    }

    fn sample(&self, prompt: &[TokenId], seed: u64) -> Result<Sampled, PoragError> {
        let model = &self.model;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cache = model.new_cache();
        let mut tokens = prompt.to_vec();
        model.advance(&tokens, &mut cache).map_err(crate::engine::EngineError::from)?;
        let eos = self.vocab.eos();
        let mut steps = Vec::new();
        for _ in 0..self.config.max_new_tokens {
            let hidden = cache.last_final_hidden.clone();
            let base_logits = cache.last_logits.clone();
            let z = self.adapter.logits(&base_logits, &hidden);
            let p = softmax_temperature(&z, self.config.temperature).map_err(crate::engine::EngineError::from)?;
            let token = sample_index(&p, &mut rng) as TokenId;
            steps.push(PolicyStep { base_logits, hidden, token });
            tokens.push(token);
            model.advance(&tokens, &mut cache).map_err(crate::engine::EngineError::from)?;
            if Some(token) == eos {
                break;
            }
        }
        let gen: Vec<TokenId> = steps.iter().map(|s| s.token).filter(|&t| Some(t) != eos).collect();
        Ok(Sampled { steps, h: cache.last_final_hidden.clone(), text: self.vocab.decode(&gen) })
    }

    /// One GRPO update on `item`. State is only committed when every
    /// quantity is finite.
    pub fn train_step(&mut self, item: &TrainItem) -> Result<StepMetrics, PoragError> {
        let cfg = self.config.grpo.clone();
        let step = self.step + 1;
        let prompt = self.prompt(item);
        let g = cfg.group_size;
        let mut group = Vec::with_capacity(g);
        for i in 0..g {
            let s = splitmix64(self.seed ^ splitmix64(((step as u64) << 8) | i as u64));
            group.push(self.sample(&prompt, s)?);
        }

        let mut finals = Vec::with_capacity(g);
        let mut fid_targets = Vec::with_capacity(g);
        let mut qual_targets = Vec::with_capacity(g);
        for c in &group {
            fid_targets.push(1.0 - fidelity_loss(&c.text, &item.docs).loss);
            qual_targets.push(1.0 - quality_loss(&c.text, &item.answer, &self.vocab)?.loss);
            let rf = self.fidelity_head.forward(&c.h)?;
            let rq = self.quality_head.forward(&c.h)?;
            finals.push(composite_reward(rf, rq, &cfg).1);
        }
        let adv = group_advantages(&finals, cfg.sigma_min)?;

        let cands: Vec<Vec<PolicyStep<f64>>> = group.iter().map(|c| c.steps.clone()).collect();
        let logp_old: Vec<Vec<f64>> = cands.iter().map(|s| candidate_log_probs(&self.adapter, s)).collect();
        let logp_ref: Vec<Vec<f64>> = cands.iter().map(|s| candidate_log_probs(&self.reference, s)).collect();
        let mut adapter = self.adapter.clone();
        let mut parts = None;
        let mut grad_norm = 0.0;
        for _ in 0..cfg.inner_iters {
            let (p, grad) = objective(&adapter, &cands, &logp_old, &logp_ref, &adv, &cfg)?;
            let grad = clip_and_normalize_grads(&grad, cfg.c_value, cfg.c_norm);
            grad_norm = norm2(&grad);
            adapter.ascend(&grad, cfg.eta_policy);
            parts = Some(p);
        }
        let parts = parts.expect("inner_iters >= 1");

        let d = self.model.config.model_dim;
        let mut heads = [self.fidelity_head.clone(), self.quality_head.clone()];
        let mut head_losses = [0.0; 2];
        for (k, targets) in [&fid_targets, &qual_targets].into_iter().enumerate() {
            let mut acc = zero_grad(d);
            for (c, &t) in group.iter().zip(targets) {
                let (loss, gr) = heads[k].loss_grad(&c.h, t)?;
                head_losses[k] += loss / g as f64;
                add_scaled(&mut acc, &gr, 1.0 / g as f64);
            }
            heads[k].descend(&acc, cfg.eta_reward);
        }

        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let reward_mean = mean(&finals);
        let reward_std = (finals.iter().map(|r| (r - reward_mean).powi(2)).sum::<f64>() / g as f64).sqrt();
        let metrics = StepMetrics {
            step,
            j: parts.j,
            l_clip: parts.l_clip,
            kl: parts.kl,
            reward_mean,
            reward_std,
            fidelity_head_loss: head_losses[0],
            quality_head_loss: head_losses[1],
            fidelity_target_mean: mean(&fid_targets),
            quality_target_mean: mean(&qual_targets),
            policy_grad_norm: grad_norm,
            mean_len: group.iter().map(|c| c.steps.len() as f64).sum::<f64>() / g as f64,
        };
        let checks = [
            ("objective", metrics.j),
            ("kl", metrics.kl),
            ("reward", metrics.reward_mean),
            ("fidelity head loss", metrics.fidelity_head_loss),
            ("quality head loss", metrics.quality_head_loss),
        ];
        for (what, v) in checks {
            if !v.is_finite() {
                return Err(PoragError::NonFinite { step, what: what.into() });
            }
        }
        if !adapter.flat().iter().all(|v| v.is_finite()) || !heads.iter().all(RewardHeadParams::is_finite) {
            return Err(PoragError::NonFinite { step, what: "parameters".into() });
        }
        let [fh, qh] = heads;
        self.adapter = adapter;
        self.fidelity_head = fh;
        self.quality_head = qh;
        self.step = step;
        Ok(metrics)
    }
}
