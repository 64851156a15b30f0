//! End-to-end runs behind the command-line entry points: retrieval-augmented
//! generation with attention-triggered retrieval and optional cache
//! compression, the compression bench, policy training and QA evaluation.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atlas::{
    default_stopwords, formulate_query, load_stopwords, lrp_candidates, mlag_score, relevance_precheck,
    scaling_factor, select_query_tokens, semantic_filter, AtlasConfig, AtlasError, RetrievalQuery,
};
use crate::backend::toy::render_chat;
use crate::backend::{Backend, BackendError, ChatMessage, RemoteBackend, ToyBackend};
use crate::config::{BackendKind, ConfigError, RunConfig};
use crate::critic::{retain_count, CompressionConfig, CompressionStats, Critic, CriticError};
use crate::decoders::{call_seed, messages, run_decoder, DecoderError, DecoderTrace};
use crate::engine::{EngineError, Generation, Repetition};
use crate::model::rng::splitmix64;
use crate::model::{TokenId, Vocab};
use crate::porag::{
    exact_match, load_checkpoint, load_train_data, rouge_l, rouge_n, save_checkpoint, token_f1, PoragError,
    StepMetrics, Trainer, CHECKPOINT_JSON,
};
use crate::retrieval::{format_context, ingest_corpus, retrieve, Index, RetrievalConfig, RetrievalError};
use crate::sampling::SamplerParams;
use crate::Model;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("backend: {0}")]
    Backend(BackendError),
    #[error("{0}")]
    Capability(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("{0}")]
    Internal(String),
}

impl RunError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Usage(_) | RunError::Retrieval(_) => 2,
            RunError::Backend(_) => 3,
            RunError::Capability(_) => 4,
            RunError::NonFinite(_) => 5,
            RunError::Io(_) | RunError::Internal(_) => 1,
        }
    }
}

impl From<BackendError> for RunError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Capability(m) => RunError::Capability(m),
            BackendError::InvalidRequest(m) => RunError::Usage(m),
            other => RunError::Backend(other),
        }
    }
}

impl From<DecoderError> for RunError {
    fn from(e: DecoderError) -> Self {
        match e {
            DecoderError::Backend(b) | DecoderError::Stage { source: b, .. } => b.into(),
            DecoderError::InvalidArgument(m) => RunError::Usage(m),
            DecoderError::AllFailed(m) => RunError::Backend(BackendError::Other(m)),
            DecoderError::Engine(e) => e.into(),
        }
    }
}

impl From<EngineError> for RunError {
    fn from(e: EngineError) -> Self {
        RunError::Internal(e.to_string())
    }
}

impl From<AtlasError> for RunError {
    fn from(e: AtlasError) -> Self {
        RunError::Internal(e.to_string())
    }
}

impl From<CriticError> for RunError {
    fn from(e: CriticError) -> Self {
        RunError::Internal(e.to_string())
    }
}

impl From<PoragError> for RunError {
    fn from(e: PoragError) -> Self {
        match e {
            PoragError::NonFinite { .. } => RunError::NonFinite(e.to_string()),
            PoragError::InvalidConfig(_) | PoragError::Data { .. } => RunError::Usage(e.to_string()),
            PoragError::Io(io) => RunError::Io(io),
            other => RunError::Internal(other.to_string()),
        }
    }
}

/// Model, backend and (when configured) retrieval index for one run.
pub struct Runtime {
    pub model: Arc<Model>,
    pub backend: Box<dyn Backend>,
    pub index: Option<Index>,
    pub stopwords: HashSet<String>,
}

impl Runtime {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, RunError> {
        cfg.validate()?;
        let model = Arc::new(Model::build(cfg.model.clone()).map_err(|e| RunError::Usage(e.to_string()))?);
        let backend: Box<dyn Backend> = match cfg.backend.kind {
            BackendKind::Toy => Box::new(ToyBackend::new(Arc::clone(&model))),
            BackendKind::Remote => Box::new(RemoteBackend::new(cfg.backend.remote.clone().with_env())?),
        };
        let index = match &cfg.retrieval.corpus_path {
            Some(p) => Some(Index::build(&ingest_corpus(Path::new(p))?)),
            None => None,
        };
        let stopwords = match &cfg.atlas.stopwords_path {
            Some(p) => load_stopwords(Path::new(p))?,
            None => default_stopwords(),
        };
        Ok(Self { model, backend, index, stopwords })
    }

    /// Same runtime with a different backend.
    pub fn with_backend(mut self, backend: Box<dyn Backend>) -> Self {
        self.backend = backend;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlagEvent {
    pub step: usize,
    pub position: usize,
    pub token: String,
    pub p: f64,
    pub filter: bool,
    pub precheck: bool,
    pub alpha: f64,
    /// Present when the precheck passed and the score was computed.
    pub gradient_factor: Option<f64>,
    pub density: Option<f64>,
    pub score: Option<f64>,
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEvent {
    pub step: usize,
    pub position: usize,
    pub query_tokens: Vec<String>,
    pub query: String,
    pub query_fallback: bool,
    pub doc_ids: Vec<String>,
    pub context: String,
    pub reprefill_seed: u64,
}

/// Options for [`instrumented_generate`].
pub struct LoopOptions<'a> {
    pub system: &'a str,
    pub sampler: SamplerParams,
    pub repetition: Repetition,
    pub max_tokens: usize,
    pub seed: u64,
    pub stop_at_eos: bool,
    pub atlas: Option<&'a AtlasConfig>,
    pub retrieval: &'a RetrievalConfig,
    pub critic: Option<&'a CompressionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopResult {
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub prompt_tokens: usize,
    pub mlag: Vec<MlagEvent>,
    pub retrievals: Vec<RetrievalEvent>,
    pub compression: Option<CompressionStats>,
    /// Key dot products over the whole run, across re-prefills.
    pub dot_products: u64,
    pub total_processed: usize,
    pub n_kept: usize,
    /// SHA-256 over every step's logits.
    pub logits_digest: String,
    #[serde(skip)]
    pub step_logits: Vec<Vec<f64>>,
}

fn fit_prompt(mut prompt: Vec<TokenId>, max_seq: usize, max_tokens: usize) -> Vec<TokenId> {
    let room = max_seq - max_tokens;
    if prompt.len() > room {
        prompt.drain(..prompt.len() - room);
    }
    prompt
}

/// Token-level decode over the toy model. Matches the toy backend's output
/// for the same prompt, sampler and seed; ATLAS scoring never touches the
/// sampling stream, so only an actual retrieval changes the output.
pub fn instrumented_generate(
    model: &Model,
    vocab: &Vocab,
    backend: &dyn Backend,
    index: Option<&Index>,
    stopwords: &HashSet<String>,
    question: &str,
    opts: &LoopOptions<'_>,
) -> Result<LoopResult, RunError> {
    let max_seq = model.config.max_seq;
    if opts.max_tokens >= max_seq {
        return Err(RunError::Usage(format!("max_tokens must be < max_seq {max_seq}")));
    }
    opts.sampler.validate().map_err(|e| RunError::Usage(e.to_string()))?;
    let prompt = fit_prompt(vocab.encode(&render_chat(&messages(opts.system, question.into()))), max_seq, opts.max_tokens);
    let prompt_tokens = prompt.len();
    let mut g = Generation::new(model, prompt, opts.seed)?;
    let mut critic = opts.critic.map(|c| Critic::new(CompressionConfig { enabled: true, ..c.clone() })).transpose()?;
    let eos = vocab.eos();

    let mut generated: Vec<TokenId> = Vec::new();
    let mut p_model: Vec<f64> = Vec::new();
    let mut mlag = Vec::new();
    let mut retrievals = Vec::new();
    let mut dot_done = 0u64;
    let mut hasher = Sha256::new();
    let mut step_logits = Vec::new();

    for step in 0..opts.max_tokens {
        g.advance()?;
        if let (Some(a), Some(&last)) = (opts.atlas, generated.last()) {
            let i = g.tokens.len() - 1;
            let p = *p_model.last().expect("one probability per token");
            let filter = semantic_filter(last, vocab, stopwords)?;
            let alpha = scaling_factor(a.alpha0, a.lambda, g.cache.memory_bytes() as f64, a.compute_max)?;
            let precheck = relevance_precheck(p, a.tau_p, filter);
            let mut ev = MlagEvent {
                step,
                position: i,
                token: vocab.token_str(last).unwrap_or("").to_string(),
                p,
                filter,
                precheck,
                alpha,
                gradient_factor: None,
                density: None,
                score: None,
                triggered: false,
            };
            let mut trace = None;
            if precheck {
                let t = g.trace();
                let b = mlag_score(&t, i, p, filter, alpha)?;
                ev.gradient_factor = Some(b.gradient_factor);
                ev.density = Some(b.density);
                ev.score = Some(b.score);
                ev.triggered = b.triggers(a.mlag_threshold);
                trace = Some(t);
            }
            let triggered = ev.triggered;
            mlag.push(ev);
            if let (true, Some(t), Some(index)) = (triggered && retrievals.len() < a.max_retrievals, trace, index) {
                let cands = lrp_candidates(&t, i, vocab, stopwords, a.beta, a.tau_embed)?;
                let scored: Vec<(usize, f64)> = cands.iter().map(|c| (c.position, c.score.combined)).collect();
                let positions = select_query_tokens(&scored, a.k_tokens);
                if !positions.is_empty() {
                    let toks: Vec<String> =
                        positions.iter().map(|&p| vocab.token_str(t.tokens[p]).unwrap_or("").to_string()).collect();
                    let qseed = splitmix64(opts.seed ^ (0x5152 + retrievals.len() as u64));
                    let q: RetrievalQuery =
                        formulate_query(positions, toks, a.query_via_backend.then_some(backend), qseed)?;
                    let hits = retrieve(index, &q.query, opts.retrieval.top_n);
                    let docs: Vec<_> = hits.iter().map(|h| h.doc).collect();
                    let context = format_context(&docs, opts.retrieval.context_budget);
                    if !context.is_empty() {
                        let reprefill_seed = splitmix64(opts.seed ^ splitmix64(retrievals.len() as u64 + 0x100));
                        let mut msgs = Vec::new();
                        let sys = if opts.system.is_empty() {
                            format!("context : {context}")
                        } else {
                            format!("{} context : {context}", opts.system)
                        };
                        msgs.push(ChatMessage::system(sys));
                        msgs.push(ChatMessage::user(question));
                        let mut prompt = vocab.encode(&render_chat(&msgs));
                        prompt.extend_from_slice(&generated);
                        let prompt = fit_prompt(prompt, max_seq, opts.max_tokens - generated.len().min(opts.max_tokens));
                        dot_done += g.cache.dot_products;
                        let keep = generated.len().min(prompt.len());
                        let mut ng = Generation::new(model, prompt, reprefill_seed)?;
                        ng.prompt_len -= keep;
                        g = ng;
                        g.advance()?;
                        retrievals.push(RetrievalEvent {
                            step,
                            position: i,
                            query_tokens: q.tokens,
                            query: q.query,
                            query_fallback: q.fallback,
                            doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
                            context,
                            reprefill_seed,
                        });
                    }
                }
            }
        }
        if let Some(c) = critic.as_mut() {
            c.after_step(&mut g.cache, step)?;
        }
        for v in g.logits() {
            hasher.update(v.to_le_bytes());
        }
        step_logits.push(g.logits().to_vec());
        let c = g.choose(&opts.sampler, &opts.repetition)?;
        g.push(c.token);
        generated.push(c.token);
        p_model.push(c.p_model);
        if opts.stop_at_eos && Some(c.token) == eos {
            break;
        }
    }
    let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(LoopResult {
        text: vocab.decode(&generated),
        tokens: generated,
        prompt_tokens,
        mlag,
        retrievals,
        compression: critic.map(|c| c.stats),
        dot_products: dot_done + g.cache.dot_products,
        total_processed: g.cache.total_processed,
        n_kept: g.cache.n_kept(),
        logits_digest: digest,
        step_logits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateTrace {
    pub question: String,
    pub seed: u64,
    pub decoder: String,
    pub backend: String,
    pub atlas_enabled: bool,
    pub critic_enabled: bool,
    pub answer: String,
    pub mlag: Vec<MlagEvent>,
    pub retrievals: Vec<RetrievalEvent>,
    pub compression: Option<CompressionStats>,
    pub decoder_trace: Option<DecoderTrace>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutput {
    pub answer: String,
    pub trace: GenerateTrace,
}

pub const ANSWER_FILE: &str = "answer.txt";
pub const TRACE_FILE: &str = "trace.json";

impl GenerateOutput {
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(ANSWER_FILE), format!("{}\n", self.answer))?;
        let json = serde_json::to_string_pretty(&self.trace).map_err(|e| RunError::Internal(e.to_string()))?;
        std::fs::write(dir.join(TRACE_FILE), json + "\n")?;
        Ok(())
    }
}

/// Answers `question` with the configured decoder. With ATLAS or CRITIC
/// enabled the token loop runs over the model directly; for decoders other
/// than `sample`, that loop is a draft pass whose retrieved context is then
/// handed to the decoder in its system prompt.
pub fn run_generate(cfg: &RunConfig, rt: &Runtime, question: &str) -> Result<GenerateOutput, RunError> {
    let dc = &cfg.decoder;
    let instrumented = cfg.atlas.enabled || cfg.critic.enabled;
    let mut trace = GenerateTrace {
        question: question.into(),
        seed: cfg.seed,
        decoder: dc.name.clone(),
        backend: rt.backend.name().into(),
        atlas_enabled: cfg.atlas.enabled,
        critic_enabled: cfg.critic.enabled,
        answer: String::new(),
        mlag: Vec::new(),
        retrievals: Vec::new(),
        compression: None,
        decoder_trace: None,
        notes: Vec::new(),
    };
    if !instrumented {
        let out = run_decoder(rt.backend.as_ref(), question, dc, cfg.seed)?;
        trace.answer = out.answer.clone();
        trace.decoder_trace = Some(out.trace);
        return Ok(GenerateOutput { answer: out.answer, trace });
    }
    let what = if cfg.atlas.enabled { "attention-triggered retrieval" } else { "cache compression" };
    let intro = crate::backend::require_introspection(rt.backend.as_ref(), what)?;
    if cfg.atlas.enabled && rt.index.is_none() {
        return Err(RunError::Usage("atlas is enabled but retrieval.corpus_path is not set".into()));
    }
    let opts = LoopOptions {
        system: &dc.system_prompt,
        sampler: dc.sampler,
        repetition: Repetition::default(),
        max_tokens: dc.max_tokens,
        seed: call_seed(cfg.seed, 0),
        stop_at_eos: true,
        atlas: cfg.atlas.enabled.then_some(&cfg.atlas),
        retrieval: &cfg.retrieval,
        critic: cfg.critic.enabled.then_some(&cfg.critic),
    };
    let r = instrumented_generate(intro.model(), intro.vocab(), rt.backend.as_ref(), rt.index.as_ref(), &rt.stopwords, question, &opts)?;
    trace.mlag = r.mlag;
    trace.compression = r.compression;
    let answer = if dc.name == "sample" {
        r.text
    } else {
        trace.notes.push(format!("draft pass retrieved {} times; draft answer: {}", r.retrievals.len(), r.text));
        if cfg.critic.enabled {
            trace.notes.push("compression applies to the draft pass only".into());
        }
        let mut dcfg = dc.clone();
        if let Some(last) = r.retrievals.last() {
            dcfg.system_prompt = if dc.system_prompt.is_empty() {
                format!("context : {}", last.context)
            } else {
                format!("{} context : {}", dc.system_prompt, last.context)
            };
        }
        let out = run_decoder(rt.backend.as_ref(), question, &dcfg, cfg.seed)?;
        trace.decoder_trace = Some(out.trace);
        out.answer
    };
    trace.retrievals = r.retrievals;
    trace.answer = answer.clone();
    Ok(GenerateOutput { answer, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub generated_tokens: usize,
    pub total_processed: usize,
    pub n_kept: usize,
    pub dot_products: u64,
    /// Kept over processed tokens at the end of the run.
    pub achieved_ratio: f64,
    pub logits_digest: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEvent {
    pub step: usize,
    pub n_before: usize,
    pub n_after: usize,
    pub ratio: f64,
    /// `retain_count(n_before, ratio, min_tokens)`.
    pub expected_n_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressBenchReport {
    pub schema_version: u32,
    pub seed: u64,
    pub prompt_tokens: usize,
    pub max_tokens: usize,
    pub critic: CompressionConfig,
    pub baseline: BenchRun,
    pub compressed: BenchRun,
    pub events: Vec<BenchEvent>,
    pub events_match_formula: bool,
    /// `compressed.dot_products / baseline.dot_products`.
    pub dot_product_ratio: f64,
    pub dot_products_saved: u64,
    /// First generated index where the two outputs differ.
    pub divergence_index: Option<usize>,
}

/// JSON schema of [`CompressBenchReport`].
pub const COMPRESS_BENCH_SCHEMA: &str = include_str!("../schema/compress_bench.schema.json");

/// Decodes `prompt` with and without compression under the same seed.
/// Both runs decode exactly `max_tokens` tokens so the counters compare.
pub fn run_compress_bench(cfg: &RunConfig, rt: &Runtime, prompt: &str) -> Result<CompressBenchReport, RunError> {
    let intro = crate::backend::require_introspection(rt.backend.as_ref(), "compress-bench")?;
    let dc = &cfg.decoder;
    let critic = CompressionConfig { enabled: true, ..cfg.critic.clone() };
    let mut opts = LoopOptions {
        system: &dc.system_prompt,
        sampler: dc.sampler,
        repetition: Repetition::default(),
        max_tokens: dc.max_tokens,
        seed: call_seed(cfg.seed, 0),
        stop_at_eos: false,
        atlas: None,
        retrieval: &cfg.retrieval,
        critic: None,
    };
    let run = |opts: &LoopOptions<'_>| {
        instrumented_generate(intro.model(), intro.vocab(), rt.backend.as_ref(), None, &rt.stopwords, prompt, opts)
    };
    let base = run(&opts)?;
    opts.critic = Some(&critic);
    let comp = run(&opts)?;
    let summary = |r: &LoopResult| BenchRun {
        generated_tokens: r.tokens.len(),
        total_processed: r.total_processed,
        n_kept: r.n_kept,
        dot_products: r.dot_products,
        achieved_ratio: r.n_kept as f64 / r.total_processed.max(1) as f64,
        logits_digest: r.logits_digest.clone(),
        text: r.text.clone(),
    };
    let stats = comp.compression.clone().unwrap_or_default();
    let mut events = Vec::new();
    for e in &stats.events {
        events.push(BenchEvent {
            step: e.step,
            n_before: e.n_before,
            n_after: e.n_after,
            ratio: e.ratio,
            expected_n_after: retain_count(e.n_before, e.ratio, critic.min_tokens)?,
        });
    }
    let divergence_index = base.tokens.iter().zip(&comp.tokens).position(|(a, b)| a != b).or_else(|| {
        (base.tokens.len() != comp.tokens.len()).then(|| base.tokens.len().min(comp.tokens.len()))
    });
    Ok(CompressBenchReport {
        schema_version: 1,
        seed: cfg.seed,
        prompt_tokens: base.prompt_tokens,
        max_tokens: dc.max_tokens,
        events_match_formula: events.iter().all(|e| e.n_after == e.expected_n_after),
        events,
        dot_product_ratio: comp.dot_products as f64 / base.dot_products.max(1) as f64,
        dot_products_saved: stats.attention_dot_products_saved,
        divergence_index,
        baseline: summary(&base),
        compressed: summary(&comp),
        critic,
    })
}

pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub start_step: usize,
    pub end_step: usize,
    pub checkpoint_dir: String,
    pub base_checksum: String,
}

/// Trains the adapter and reward heads on `data`, appending one JSON line per
/// step to `out/metrics.jsonl` and checkpointing into `out/checkpoint`.
/// With `resume`, an existing checkpoint is loaded and training continues
/// at the step after it. A non-finite step stops the run; the checkpoint on
/// disk then holds the last finite state.
pub fn run_train(cfg: &RunConfig, model: Arc<Model>, data: &Path, out: &Path, resume: bool) -> Result<TrainReport, RunError> {
    let items = load_train_data(data)?;
    let pc = &cfg.porag;
    if items.is_empty() && pc.steps > 0 {
        return Err(RunError::Usage(format!("{} has no training items", data.display())));
    }
    let mut trainer = Trainer::new(model, pc.clone(), cfg.seed)?;
    let ckpt = out.join("checkpoint");
    std::fs::create_dir_all(out)?;
    if resume && ckpt.join(CHECKPOINT_JSON).exists() {
        load_checkpoint(&mut trainer, &ckpt)?;
    }
    let start_step = trainer.step;
    let metrics_path = out.join(METRICS_FILE);
    if !resume {
        std::fs::write(&metrics_path, "")?;
    } else if metrics_path.exists() {
        // Drop lines past the checkpoint so resumed steps are not duplicated.
        let kept: Vec<String> = std::fs::read_to_string(&metrics_path)?
            .lines()
            .filter(|l| serde_json::from_str::<StepMetrics>(l).is_ok_and(|m| m.step <= start_step))
            .map(|l| format!("{l}\n"))
            .collect();
        std::fs::write(&metrics_path, kept.concat())?;
    }
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(&metrics_path)?;
    while trainer.step < pc.steps {
        let item = &items[trainer.step % items.len()];
        match trainer.train_step(item) {
            Ok(m) => {
                let line = serde_json::to_string(&m).map_err(|e| RunError::Internal(e.to_string()))?;
                writeln!(log, "{line}")?;
                if pc.checkpoint_every > 0 && trainer.step % pc.checkpoint_every == 0 {
                    save_checkpoint(&trainer, &ckpt)?;
                }
            }
            Err(e @ PoragError::NonFinite { .. }) => {
                log.flush()?;
                save_checkpoint(&trainer, &ckpt)?;
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        }
    }
    log.flush()?;
    save_checkpoint(&trainer, &ckpt)?;
    trainer.verify_base()?;
    Ok(TrainReport {
        start_step,
        end_step: trainer.step,
        checkpoint_dir: ckpt.display().to_string(),
        base_checksum: trainer.base_checksum.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub line: usize,
    pub question: String,
    pub answer: String,
    pub prediction: String,
    pub em: f64,
    pub f1: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub n: usize,
    pub em: f64,
    pub f1: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<EvalItem>,
    pub aggregate: Option<EvalAggregate>,
    pub errors: Vec<LineError>,
}

#[derive(Deserialize)]
struct QaLine {
    question: String,
    answer: String,
    #[serde(default)]
    prediction: Option<String>,
}

/// Scores each `{"question", "answer"}` line. Lines carrying a
/// `"prediction"` are scored as given; the rest are answered with
/// [`run_generate`]. Malformed lines are reported and skipped.
pub fn run_eval(cfg: &RunConfig, rt: &Runtime, qa: &Path) -> Result<EvalReport, RunError> {
    let text = std::fs::read_to_string(qa)?;
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: QaLine = match serde_json::from_str(line) {
            Ok(q) => q,
            Err(e) => {
                errors.push(LineError { line: i + 1, error: e.to_string() });
                continue;
            }
        };
        let prediction = match q.prediction {
            Some(p) => p,
            None => run_generate(cfg, rt, &q.question)?.answer,
        };
        items.push(EvalItem {
            line: i + 1,
            em: exact_match(&prediction, &q.answer),
            f1: token_f1(&prediction, &q.answer),
            rouge1: rouge_n(&prediction, &q.answer, 1),
            rouge2: rouge_n(&prediction, &q.answer, 2),
            rouge_l: rouge_l(&prediction, &q.answer),
            question: q.question,
            answer: q.answer,
            prediction,
        });
    }
    let aggregate = (!items.is_empty()).then(|| {
        let n = items.len() as f64;
        let mean = |f: fn(&EvalItem) -> f64| items.iter().map(f).sum::<f64>() / n;
        EvalAggregate {
            n: items.len(),
            em: mean(|x| x.em),
            f1: mean(|x| x.f1),
            rouge1: mean(|x| x.rouge1),
            rouge2: mean(|x| x.rouge2),
            rouge_l: mean(|x| x.rouge_l),
        }
    });
    Ok(EvalReport { items, aggregate, errors })
}
