//! Test-time decoding strategies. Every strategy talks to a [`Backend`]
//! through a [`Session`], which assigns per-call seeds and records each
//! prompt, parameter set and response so a run can be replayed exactly.

mod cot_decode;
mod entropy;
mod mcts;
mod prompting;
mod rstar;
mod similarity;
mod voting;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, CassetteBackend, CassetteEntry, ChatMessage, GenRequest};
use crate::engine::Repetition;
use crate::model::rng::splitmix64;
use crate::sampling::SamplerParams;

pub use cot_decode::{cot_decode, token_reliability, CotDecodeResult, CotPath, MicroModel, PathModel, ToyPathModel};
pub use entropy::{
    adapt_sampler_params, attention_metrics, entropy_guided_generate, uncertainty_metrics, AdaptBounds, Betas,
    EntropyGuided, EntropyStep, UncertaintyMetrics,
};
pub use mcts::{mcts_search, uct_score, MctsConfig, MctsNode, MctsResult, EVAL_PROMPT};
pub use prompting::{
    cot_reflection, extract_output, moa_pipeline, plansearch_pipeline, postprocess, re2, re2_prompt, rto_pipeline,
    CotReflection, MoaConfig, RtoResult, COT_REFLECTION_SYSTEM,
};
pub use rstar::{r_star_search, RStarConfig, RStarResult, Trajectory, R_STAR_ACTIONS};
pub use similarity::{cluster_responses, response_similarity, word_overlap, Cluster};
pub use voting::{best_of_n, parse_rating, parse_unit, self_consistency, BestOfN, SelfConsistency, RATING_PROMPT};

#[derive(Debug, thiserror::Error)]
pub enum DecoderError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("every backend call failed: {0}")]
    AllFailed(String),
    #[error("stage {stage}: {source}")]
    Stage { stage: &'static str, source: BackendError },
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallParams {
    pub sampler: SamplerParams,
    pub max_tokens: usize,
    pub seed: u64,
    pub repetition: Repetition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub prompt: Vec<ChatMessage>,
    pub params: CallParams,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The JSON trace every strategy emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderTrace {
    pub strategy: String,
    pub seeds: Vec<u64>,
    pub calls: Vec<CallRecord>,
    pub decision: serde_json::Value,
}

impl DecoderTrace {
    /// A backend that answers every successful recorded call.
    pub fn to_cassette(&self) -> CassetteBackend {
        CassetteBackend::new(
            self.calls
                .iter()
                .filter(|c| c.error.is_none())
                .map(|c| CassetteEntry { request: request_of(&c.prompt, &c.params), response: c.response.clone() })
                .collect(),
        )
    }
}

fn request_of(prompt: &[ChatMessage], p: &CallParams) -> GenRequest {
    let mut req = GenRequest::new(prompt.to_vec(), p.sampler, p.max_tokens, p.seed);
    req.repetition = p.repetition;
    req
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub answer: String,
    pub trace: DecoderTrace,
}

/// Seed of the `index`-th backend call (0-based) of a session.
pub fn call_seed(base_seed: u64, index: usize) -> u64 {
    splitmix64(base_seed ^ splitmix64(index as u64 + 1))
}

/// Seeded, recorded access to a backend for one strategy invocation.
pub struct Session<'a> {
    backend: &'a dyn Backend,
    base_seed: u64,
    pub max_tokens: usize,
    pub sampler: SamplerParams,
    calls: Vec<CallRecord>,
}

impl<'a> Session<'a> {
    pub fn new(backend: &'a dyn Backend, base_seed: u64, max_tokens: usize, sampler: SamplerParams) -> Self {
        Self { backend, base_seed, max_tokens, sampler, calls: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.base_seed
    }

    pub fn backend(&self) -> &'a dyn Backend {
        self.backend
    }

    pub fn n_calls(&self) -> usize {
        self.calls.len()
    }

    pub fn calls(&self) -> &[CallRecord] {
        &self.calls
    }

    fn next_seed(&self) -> u64 {
        call_seed(self.base_seed, self.calls.len())
    }

    pub fn call(&mut self, prompt: Vec<ChatMessage>, temperature: f64) -> Result<String, BackendError> {
        let sampler = SamplerParams { temperature, ..self.sampler };
        self.call_with(prompt, sampler, Repetition::default())
    }

    pub fn call_with(
        &mut self,
        prompt: Vec<ChatMessage>,
        sampler: SamplerParams,
        repetition: Repetition,
    ) -> Result<String, BackendError> {
        let params = CallParams { sampler, max_tokens: self.max_tokens, seed: self.next_seed(), repetition };
        let result = self.backend.generate(&request_of(&prompt, &params));
        let (response, error) = match &result {
            Ok(r) => (r.text.clone(), None),
            Err(e) => (String::new(), Some(e.to_string())),
        };
        self.calls.push(CallRecord { prompt, params, response, error });
        result.map(|r| r.text)
    }

    pub fn finish(self, strategy: &str, decision: serde_json::Value) -> DecoderTrace {
        DecoderTrace {
            strategy: strategy.into(),
            seeds: self.calls.iter().map(|c| c.params.seed).collect(),
            calls: self.calls,
            decision,
        }
    }
}

/// Optional system message followed by one user turn.
pub fn messages(system: &str, user: String) -> Vec<ChatMessage> {
    let mut m = Vec::with_capacity(2);
    if !system.is_empty() {
        m.push(ChatMessage::system(system));
    }
    m.push(ChatMessage::user(user));
    m
}

/// Names accepted by [`run_decoder`].
pub const DECODER_NAMES: &[&str] = &[
    "sample",
    "self-consistency",
    "best-of-n",
    "cot-reflection",
    "re2",
    "moa",
    "rto",
    "plansearch",
    "mcts",
    "rstar",
    "entropy-guided",
    "cot-decode",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub name: String,
    pub max_tokens: usize,
    pub system_prompt: String,
    pub sampler: SamplerParams,
    pub k: usize,
    pub temperature: f64,
    pub cluster_tau: f64,
    pub rating_temperature: f64,
    pub moa: MoaConfig,
    pub rto_tau: f64,
    pub plansearch_n1: usize,
    pub plansearch_n2: usize,
    pub plansearch_solves: usize,
    pub mcts: MctsConfig,
    pub rstar: RStarConfig,
    pub betas: Betas,
    pub bounds: AdaptBounds,
    pub cot_alpha: f64,
    pub cot_consolidate: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            name: "sample".into(),
            max_tokens: 24,
            system_prompt: String::new(),
            sampler: SamplerParams::default(),
            k: 5,
            temperature: 0.8,
            cluster_tau: 0.5,
            rating_temperature: 0.1,
            moa: MoaConfig::default(),
            rto_tau: 0.7,
            plansearch_n1: 3,
            plansearch_n2: 2,
            plansearch_solves: 1,
            mcts: MctsConfig::default(),
            rstar: RStarConfig::default(),
            betas: Betas::default(),
            bounds: AdaptBounds::default(),
            cot_alpha: 0.5,
            cot_consolidate: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        if !DECODER_NAMES.contains(&self.name.as_str()) {
            return Err(DecoderError::InvalidArgument(format!(
                "unknown decoder {:?}; expected one of {}",
                self.name,
                DECODER_NAMES.join(", ")
            )));
        }
        if self.max_tokens == 0 || self.k == 0 {
            return Err(DecoderError::InvalidArgument("max_tokens and k must be >= 1".into()));
        }
        self.sampler.validate().map_err(|e| DecoderError::InvalidArgument(e.to_string()))?;
        self.moa.validate()?;
        Ok(())
    }
}

/// Runs the strategy named in `cfg` on `query`.
pub fn run_decoder(backend: &dyn Backend, query: &str, cfg: &DecoderConfig, seed: u64) -> Result<Outcome, DecoderError> {
    cfg.validate()?;
    let mut s = Session::new(backend, seed, cfg.max_tokens, cfg.sampler);
    let sys = cfg.system_prompt.as_str();
    match cfg.name.as_str() {
        "sample" => {
            let answer = s.call(messages(sys, query.into()), cfg.sampler.temperature)?;
            let trace = s.finish("sample", serde_json::json!({ "answer": answer }));
            Ok(Outcome { answer, trace })
        }
        "self-consistency" => {
            self_consistency(s, sys, query, cfg.k, cfg.temperature, cfg.cluster_tau).map(|r| r.outcome)
        }
        "best-of-n" => best_of_n(s, sys, query, cfg.k, cfg.temperature, cfg.rating_temperature).map(|r| r.outcome),
        "cot-reflection" => cot_reflection(s, query, cfg.temperature).map(|r| r.outcome),
        "re2" => re2(s, sys, query, cfg.temperature),
        "moa" => moa_pipeline(s, sys, query, &cfg.moa),
        "rto" => rto_pipeline(s, sys, query, cfg.rto_tau, cfg.temperature, None).map(|r| r.outcome),
        "plansearch" => plansearch_pipeline(
            s,
            sys,
            query,
            cfg.plansearch_n1,
            cfg.plansearch_n2,
            cfg.plansearch_solves,
            cfg.temperature,
        )
        .map(|(o, _)| o),
        "mcts" => mcts_search(s, sys, query, &cfg.mcts).map(|r| r.outcome),
        "rstar" => r_star_search(s, query, &cfg.rstar).map(|r| r.outcome),
        "entropy-guided" => {
            let r = entropy_guided_generate(backend, &messages(sys, query.into()), &cfg.sampler, &cfg.betas, &cfg.bounds, cfg.max_tokens, seed)?;
            let decision = serde_json::json!({ "answer": r.text, "steps": r.steps });
            let trace = DecoderTrace { strategy: "entropy-guided".into(), seeds: vec![seed], calls: Vec::new(), decision };
            Ok(Outcome { answer: r.text, trace })
        }
        "cot-decode" => {
            let intro = crate::backend::require_introspection(backend, "cot-decode")?;
            let prompt = intro.encode_messages(&messages(sys, query.into()));
            let pm = ToyPathModel::new(intro.model(), intro.vocab());
            let r = cot_decode(&pm, &prompt, cfg.k, cfg.cot_alpha, cfg.max_tokens, cfg.cot_consolidate)?;
            let answer = r.paths[r.winner].text.clone();
            let decision = serde_json::json!({
                "winner": r.winner,
                "paths": r.paths,
                "kept": r.kept,
            });
            let trace = DecoderTrace { strategy: "cot-decode".into(), seeds: vec![seed], calls: Vec::new(), decision };
            Ok(Outcome { answer, trace })
        }
        other => Err(DecoderError::InvalidArgument(format!("unknown decoder {other}"))),
    }
}
