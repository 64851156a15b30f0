use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatMessage};
use crate::engine::Repetition;

use super::similarity::word_overlap;
use super::{messages, DecoderError, Outcome, Session};

pub const COT_REFLECTION_SYSTEM: &str = "Work through the problem inside <thinking> tags. \
Check that reasoning for mistakes inside <reflection> tags and correct it if needed. \
Give only the final answer inside <output> tags.";

#[derive(Debug, Clone)]
pub struct CotReflection {
    pub outcome: Outcome,
    pub full_response: String,
    /// No `<output>` section was found; the answer is the whole response.
    pub missing_output: bool,
}

/// Text of the last `<output>` section, or `None` without one.
pub fn extract_output(text: &str) -> Option<String> {
    let start = text.rfind("<output>")? + "<output>".len();
    let rest = &text[start..];
    let end = rest.find("</output>").unwrap_or(rest.len());
    Some(rest[..end].trim().to_string())
}

pub fn cot_reflection(mut s: Session<'_>, query: &str, t: f64) -> Result<CotReflection, DecoderError> {
    let full = s.call(messages(COT_REFLECTION_SYSTEM, query.into()), t)?;
    let extracted = extract_output(&full);
    let missing_output = extracted.is_none();
    let answer = extracted.unwrap_or_else(|| full.clone());
    let decision = serde_json::json!({ "answer": answer, "missing_output": missing_output });
    let trace = s.finish("cot-reflection", decision);
    Ok(CotReflection { outcome: Outcome { answer, trace }, full_response: full, missing_output })
}

/// Three-phase read, re-read and answer prompt.
pub fn re2_prompt(system: &str, query: &str) -> Vec<ChatMessage> {
    let init = format!(
        "Step 1 - Initial Reading: Let's first read and understand the question carefully.\nOriginal Question: {query}"
    );
    let reread = format!(
        "Step 2 - Re-reading and Analysis: Let's read the question again: {query}\nNow, let's break down what the question is asking and analyze its key components."
    );
    let synth = "Step 3 - Final Answer: Based on our analysis, here is the complete answer:";
    messages(system, format!("{init}\n\n{reread}\n\n{synth}"))
}

pub fn re2(mut s: Session<'_>, system: &str, query: &str, t: f64) -> Result<Outcome, DecoderError> {
    let answer = s.call(re2_prompt(system, query), t)?;
    let trace = s.finish("re2", serde_json::json!({ "answer": answer }));
    Ok(Outcome { answer, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoaConfig {
    pub n: usize,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub repetition: Repetition,
}

impl Default for MoaConfig {
    fn default() -> Self {
        Self { n: 3, t1: 0.9, t2: 0.5, t3: 0.2, repetition: Repetition { penalty: 1.1, no_repeat_ngram: 3 } }
    }
}

impl MoaConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        if self.n == 0 {
            return Err(DecoderError::InvalidArgument("moa needs n >= 1".into()));
        }
        if !(self.t1 > self.t2 && self.t2 > self.t3 && self.t3 > 0.0) {
            return Err(DecoderError::InvalidArgument(format!(
                "moa temperatures must satisfy t1 > t2 > t3 > 0, got ({}, {}, {})",
                self.t1, self.t2, self.t3
            )));
        }
        if self.repetition.penalty < 1.0 {
            return Err(DecoderError::InvalidArgument("repetition penalty must be >= 1".into()));
        }
        Ok(())
    }
}

const SCAFFOLD_PREFIXES: &[&str] = &["rating:", "score:", "critique:", "evaluation:", "candidate "];
const LABEL_PREFIXES: &[&str] = &["final answer:", "final response:", "synthesis:", "answer:", "response:"];

/// Drops rating and critique scaffolding lines and leading answer labels.
pub fn postprocess(text: &str) -> String {
    let mut out = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        let lower = trimmed.to_lowercase();
        if SCAFFOLD_PREFIXES.iter().any(|p| lower.starts_with(p)) {
            continue;
        }
        let body = LABEL_PREFIXES
            .iter()
            .find(|p| lower.starts_with(*p))
            .map_or(trimmed, |p| trimmed[p.len()..].trim_start());
        if !body.is_empty() {
            out.push(body);
        }
    }
    let cleaned = out.join("\n");
    if cleaned.is_empty() {
        text.trim().to_string()
    } else {
        cleaned
    }
}

fn numbered(label: &str, items: &[String]) -> String {
    items.iter().enumerate().map(|(i, c)| format!("{label} {}: {c}", i + 1)).collect::<Vec<_>>().join("\n")
}

/// Candidates at `t1`, one critique at `t2`, one synthesis at `t3`.
pub fn moa_pipeline(mut s: Session<'_>, system: &str, query: &str, cfg: &MoaConfig) -> Result<Outcome, DecoderError> {
    cfg.validate()?;
    let sampler_at = |t: f64, s: &Session<'_>| crate::sampling::SamplerParams { temperature: t, ..s.sampler };
    let mut candidates = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let p = sampler_at(cfg.t1, &s);
        candidates.push(s.call_with(messages(system, query.into()), p, cfg.repetition)?);
    }
    let listed = numbered("Candidate", &candidates);
    let critique_prompt =
        format!("Question: {query}\n{listed}\nCritique each candidate: point out errors, gaps and strengths.");
    let p = sampler_at(cfg.t2, &s);
    let critique = s.call_with(messages(system, critique_prompt), p, cfg.repetition)?;
    let synth_prompt = format!(
        "Question: {query}\n{listed}\nCritique: {critique}\nWrite one final answer that keeps the strengths and fixes the errors."
    );
    let p = sampler_at(cfg.t3, &s);
    let synthesis = s.call_with(messages(system, synth_prompt), p, cfg.repetition)?;
    let answer = postprocess(&synthesis);
    let decision = serde_json::json!({
        "candidates": candidates,
        "critique": critique,
        "synthesis": synthesis,
        "answer": answer,
    });
    let trace = s.finish("moa", decision);
    Ok(Outcome { answer, trace })
}

#[derive(Debug, Clone)]
pub struct RtoResult {
    pub outcome: Outcome,
    pub overlap: f64,
    pub synthesized: bool,
    /// Quality of the returned answer minus quality of the first draft.
    pub quality_delta: Option<f64>,
}

pub type Evaluator<'e> = &'e dyn Fn(&str, &str) -> f64;

/// Draft, reconstruct the instruction, redraft from it, and synthesize only
/// when the two drafts disagree.
pub fn rto_pipeline(
    mut s: Session<'_>,
    system: &str,
    query: &str,
    tau: f64,
    t: f64,
    evaluator: Option<Evaluator<'_>>,
) -> Result<RtoResult, DecoderError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(DecoderError::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    let stage = |stage: &'static str| move |source: BackendError| DecoderError::Stage { stage, source };
    let c1 = s.call(messages(system, query.into()), t).map_err(stage("draft"))?;
    let r = s
        .call(messages(system, format!("Write the instruction that this response answers:\n{c1}")), t)
        .map_err(stage("reconstruct"))?;
    let c2 = s.call(messages(system, r.clone()), t).map_err(stage("redraft"))?;
    let overlap = word_overlap(&c1, &c2);
    let synthesized = overlap < tau;
    let answer = if synthesized {
        let prompt = format!(
            "Question: {query}\nDraft A: {c1}\nDraft B: {c2}\nCombine the drafts into one answer to the question."
        );
        s.call(messages(system, prompt), t).map_err(stage("synthesize"))?
    } else {
        c1.clone()
    };
    let quality_delta = evaluator.map(|q| q(query, &answer) - q(query, &c1));
    let decision = serde_json::json!({
        "draft": c1,
        "reconstructed": r,
        "redraft": c2,
        "overlap": overlap,
        "synthesized": synthesized,
        "quality_delta": quality_delta,
        "answer": answer,
    });
    let trace = s.finish("rto", decision);
    Ok(RtoResult { outcome: Outcome { answer, trace }, overlap, synthesized, quality_delta })
}

/// Observations, optional derived observations, strategy, then answer;
/// each stage sees everything produced before it. Runs `solves` times.
pub fn plansearch_pipeline(
    mut s: Session<'_>,
    system: &str,
    query: &str,
    n1: usize,
    n2: usize,
    solves: usize,
    t: f64,
) -> Result<(Outcome, Vec<String>), DecoderError> {
    if n1 == 0 || solves == 0 {
        return Err(DecoderError::InvalidArgument("plansearch needs n1 >= 1 and at least one solve".into()));
    }
    let mut answers = Vec::with_capacity(solves);
    for _ in 0..solves {
        let mut ctx = format!("Question: {query}");
        let obs = s.call(messages(system, format!("{ctx}\nList {n1} useful observations about the question.")), t)?;
        ctx = format!("{ctx}\nObservations: {obs}");
        if n2 > 0 {
            let derived =
                s.call(messages(system, format!("{ctx}\nCombine these into {n2} new observations.")), t)?;
            ctx = format!("{ctx}\nDerived observations: {derived}");
        }
        let strategy = s.call(messages(system, format!("{ctx}\nDescribe a strategy for answering.")), t)?;
        ctx = format!("{ctx}\nStrategy: {strategy}");
        answers.push(s.call(messages(system, format!("{ctx}\nFollow the strategy and give the answer.")), t)?);
    }
    let answer = answers[0].clone();
    let trace = s.finish("plansearch", serde_json::json!({ "answers": answers, "answer": answer }));
    Ok((Outcome { answer, trace }, answers))
}
