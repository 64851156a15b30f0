use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).display().to_string()
}

fn ragscope(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ragscope"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RAGSCOPE_API_BASE")
        .env_remove("RAGSCOPE_API_KEY")
        .env_remove("RAGSCOPE_MODEL")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn generate_writes_answer_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = data("corpus.jsonl");
    let o = ragscope(
        &["generate", "which river flows through paris ?", "--atlas", "on", "--corpus", &corpus, "--out", "run"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let answer = std::fs::read_to_string(dir.path().join("run/answer.txt")).unwrap();
    assert_eq!(answer.trim_end(), String::from_utf8_lossy(&o.stdout).trim_end());
    let trace: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/trace.json")).unwrap()).unwrap();
    assert!(trace["mlag"].as_array().is_some_and(|a| !a.is_empty()));

    let o = ragscope(&["trace", "run/trace.json"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mlag decisions"));
}

#[test]
fn printed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = data("corpus.jsonl");
    let flags = ["--seed", "17", "--atlas", "on", "--corpus", &corpus, "--max-tokens", "20"];
    let o = ragscope(&[&flags[..], &["--print-config"]].concat(), dir.path());
    assert_eq!(code(&o), 0);
    std::fs::write(dir.path().join("resolved.json"), &o.stdout).unwrap();
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed["_provenance"]["seed"], "user");
    assert_eq!(printed["_provenance"]["porag.grpo.eps_clip"], "paper-default");

    let q = "what is the capital of italy ?";
    assert_eq!(code(&ragscope(&[&["generate", q, "--out", "a"], &flags[..]].concat(), dir.path())), 0);
    assert_eq!(code(&ragscope(&["generate", q, "--config", "resolved.json", "--out", "b"], dir.path())), 0);
    let a = std::fs::read(dir.path().join("a/trace.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/trace.json")).unwrap();
    assert_eq!(a, b);

    let o = ragscope(&["--config", "resolved.json", "--print-config"], dir.path());
    assert_eq!(o.stdout, std::fs::read(dir.path().join("resolved.json")).unwrap());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"atlas": {"tau": 2}}"#).unwrap();
    std::fs::write(dir.path().join("range.json"), r#"{"porag": {"grpo": {"group_size": 3}}}"#).unwrap();
    assert_eq!(code(&ragscope(&["generate", "q", "--config", "bad.json"], dir.path())), 2);
    assert_eq!(code(&ragscope(&["generate", "q", "--config", "range.json"], dir.path())), 2);
    assert_eq!(code(&ragscope(&["generate", "q", "--config", "missing.json"], dir.path())), 2);
    assert_eq!(code(&ragscope(&["generate", "q", "--decoder", "nope"], dir.path())), 2);
    assert_eq!(code(&ragscope(&["generate", "q", "--atlas", "on"], dir.path())), 2);
    assert_eq!(code(&ragscope(&["generate", "q", "--atlas", "maybe"], dir.path())), 2);
}

#[test]
fn backend_and_capability_errors() {
    let dir = tempfile::tempdir().unwrap();
    let remote = r#"{"backend": {"kind": "remote", "remote": {"base_url": "http://127.0.0.1:9/v1", "max_retries": 0, "timeout_secs": 2, "backoff_ms": 1}}}"#;
    std::fs::write(dir.path().join("remote.json"), remote).unwrap();
    let o = ragscope(&["generate", "q", "--config", "remote.json"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let o = ragscope(&["generate", "q", "--config", "remote.json", "--decoder", "cot-decode"], dir.path());
    assert_eq!(code(&o), 4);
    let o = ragscope(&["compress-bench", &data("bench_prompt.txt"), "--config", "remote.json"], dir.path());
    assert_eq!(code(&o), 4);
}

#[test]
fn train_resume_and_non_finite() {
    let dir = tempfile::tempdir().unwrap();
    let train = data("train.jsonl");
    std::fs::write(dir.path().join("t2.json"), r#"{"porag": {"steps": 2, "group_size_note": 1}}"#).unwrap();
    assert_eq!(code(&ragscope(&["train-porag", &train, "--config", "t2.json"], dir.path())), 2);

    std::fs::write(dir.path().join("t2.json"), r#"{"porag": {"steps": 2, "grpo": {"group_size": 2}}}"#).unwrap();
    std::fs::write(dir.path().join("t3.json"), r#"{"porag": {"steps": 3, "grpo": {"group_size": 2}}}"#).unwrap();
    assert_eq!(code(&ragscope(&["train-porag", &train, "--config", "t2.json", "--out", "tr"], dir.path())), 0);
    let o = ragscope(&["train-porag", &train, "--config", "t3.json", "--out", "tr", "--resume"], dir.path());
    assert_eq!(code(&o), 0);
    let steps: Vec<u64> = std::fs::read_to_string(dir.path().join("tr/metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![1, 2, 3]);

    std::fs::write(dir.path().join("nf.json"), r#"{"porag": {"steps": 6, "checkpoint_every": 1, "grpo": {"eta_reward": 1e300}}}"#).unwrap();
    let o = ragscope(&["train-porag", &train, "--config", "nf.json", "--out", "nf"], dir.path());
    assert_eq!(code(&o), 5);
    assert!(dir.path().join("nf/checkpoint/checkpoint.bin").exists());
}

#[test]
fn bench_and_eval_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = ragscope(&["compress-bench", &data("bench_prompt.txt"), "--max-tokens", "40", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0);
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("b/compress_bench.json")).unwrap()).unwrap();
    assert_eq!(r["events_match_formula"], true);

    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let o = ragscope(&["eval", "empty.jsonl", "--out", "e"], dir.path());
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("e/eval.json")).unwrap()).unwrap();
    assert_eq!(r["items"].as_array().unwrap().len(), 0);
}
