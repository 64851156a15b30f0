use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ragscope::config::RunConfig;
use ragscope::pipeline::{
    run_compress_bench, run_eval, run_generate, run_train, GenerateTrace, RunError, Runtime, TRACE_FILE,
};
use ragscope::Model;

#[derive(Parser)]
#[command(name = "ragscope", version, about = "Retrieval, compression and decoding experiments on a toy transformer")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Decoding strategy, e.g. sample, self-consistency, moa, mcts.
    #[arg(long, global = true)]
    decoder: Option<String>,
    #[arg(long, global = true)]
    atlas: Option<Switch>,
    #[arg(long, global = true)]
    critic: Option<Switch>,
    /// Corpus JSONL for retrieval.
    #[arg(long, global = true)]
    corpus: Option<String>,
    #[arg(long, global = true)]
    max_tokens: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Print the resolved configuration with provenance tags and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Answer a question; writes answer.txt and trace.json.
    Generate { question: String },
    /// Train the adapter and reward heads on a JSONL dataset.
    TrainPorag {
        data: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Decode a prompt with and without cache compression and compare.
    CompressBench { prompt: PathBuf },
    /// Score a JSONL file of questions and gold answers.
    Eval { data: PathBuf },
    /// Summarize a generation trace.
    Trace { path: PathBuf },
}

fn resolve(g: &Global) -> Result<RunConfig, RunError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.decoder {
        cfg.decoder.name = d.clone();
    }
    if let Some(a) = g.atlas {
        cfg.atlas.enabled = a.on();
    }
    if let Some(c) = g.critic {
        cfg.critic.enabled = c.on();
    }
    if let Some(c) = &g.corpus {
        cfg.retrieval.corpus_path = Some(c.clone());
    }
    if let Some(n) = g.max_tokens {
        cfg.decoder.max_tokens = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| RunError::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn summarize(path: &Path) -> Result<(), RunError> {
    let text = std::fs::read_to_string(path)?;
    let t: GenerateTrace = serde_json::from_str(&text).map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?;
    println!("question: {}", t.question);
    println!("decoder: {} (backend {}, seed {})", t.decoder, t.backend, t.seed);
    println!("answer: {}", t.answer);
    let triggered = t.mlag.iter().filter(|e| e.triggered).count();
    println!("mlag decisions: {} ({} triggered)", t.mlag.len(), triggered);
    for e in t.mlag.iter().filter(|e| e.triggered) {
        println!("  step {:>3} pos {:>4} {:<14} p={:.4} score={:.6}", e.step, e.position, e.token, e.p, e.score.unwrap_or(0.0));
    }
    println!("retrievals: {}", t.retrievals.len());
    for r in &t.retrievals {
        println!("  step {:>3} query {:?} -> {}", r.step, r.query, r.doc_ids.join(", "));
    }
    if let Some(c) = &t.compression {
        println!("compression events: {} (last {} -> {})", c.events.len(), c.n_before, c.n_after);
    }
    if let Some(d) = &t.decoder_trace {
        println!("backend calls: {}", d.calls.len());
    }
    for n in &t.notes {
        println!("note: {n}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), RunError> {
    if let Some(Command::Trace { path }) = &cli.command {
        return summarize(path);
    }
    let cfg = resolve(&cli.global)?;
    if cli.global.print_config {
        println!("{}", cfg.resolved_json());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(RunError::Usage("no subcommand given; see --help".into()));
    };
    let out = &cli.global.out;
    match command {
        Command::Generate { question } => {
            let rt = Runtime::from_config(&cfg)?;
            let r = run_generate(&cfg, &rt, &question)?;
            r.write(out)?;
            println!("{}", r.answer);
            eprintln!("wrote {}", out.join(TRACE_FILE).display());
        }
        Command::TrainPorag { data, resume } => {
            let model = Arc::new(Model::build(cfg.model.clone()).map_err(|e| RunError::Usage(e.to_string()))?);
            let r = run_train(&cfg, model, &data, out, resume)?;
            println!("trained steps {}..{}; checkpoint in {}", r.start_step, r.end_step, r.checkpoint_dir);
        }
        Command::CompressBench { prompt } => {
            let rt = Runtime::from_config(&cfg)?;
            let text = std::fs::read_to_string(&prompt)?;
            let r = run_compress_bench(&cfg, &rt, text.trim())?;
            write_json(&out.join("compress_bench.json"), &r)?;
            println!(
                "dot products {} -> {} ({:.3}x), {} events, divergence {:?}",
                r.baseline.dot_products,
                r.compressed.dot_products,
                r.dot_product_ratio,
                r.events.len(),
                r.divergence_index
            );
        }
        Command::Eval { data } => {
            let rt = Runtime::from_config(&cfg)?;
            let r = run_eval(&cfg, &rt, &data)?;
            write_json(&out.join("eval.json"), &r)?;
            for e in &r.errors {
                eprintln!("line {}: {}", e.line, e.error);
            }
            match &r.aggregate {
                Some(a) => println!(
                    "n={} em={:.4} f1={:.4} rouge1={:.4} rouge2={:.4} rougeL={:.4}",
                    a.n, a.em, a.f1, a.rouge1, a.rouge2, a.rouge_l
                ),
                None => println!("n=0"),
            }
        }
        Command::Trace { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
