use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatMessage};
use crate::model::rng::splitmix64;

use super::voting::parse_unit;
use super::{DecoderError, Outcome, Session};

pub const EVAL_PROMPT: &str =
    "Rate the quality of the latest response to the question on a scale from 0 to 1. Respond with ONLY a number";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MctsConfig {
    pub rollouts: usize,
    pub k_expand: usize,
    /// Maximum simulation depth.
    pub depth: usize,
    /// States whose history is longer than this are terminal.
    pub h_max: usize,
    pub c: f64,
    pub temperature: f64,
    pub eval_temperature: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self { rollouts: 8, k_expand: 2, depth: 5, h_max: 6, c: 1.4, temperature: 0.8, eval_temperature: 0.1 }
    }
}

/// `V/N + c * sqrt(ln N_parent / N)`; unvisited edges score `+inf`.
pub fn uct_score(v: f64, n: u64, n_parent: u64, c: f64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let n = n as f64;
    v / n + c * ((n_parent.max(1) as f64).ln() / n).sqrt()
}

/// A tree node; `n` and `v` are the statistics of the edge into it.
#[derive(Debug, Clone, Serialize)]
pub struct MctsNode {
    pub parent: Option<usize>,
    pub action: String,
    pub history: Vec<String>,
    pub n: u64,
    pub v: f64,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MctsResult {
    pub outcome: Outcome,
    pub nodes: Vec<MctsNode>,
    pub completed: usize,
    pub aborted: usize,
    pub eval_parse_failures: usize,
    /// Root child holding the answer.
    pub best: usize,
}

pub(crate) fn state_messages(system: &str, query: &str, history: &[String]) -> Vec<ChatMessage> {
    let mut m = Vec::with_capacity(history.len() + 2);
    if !system.is_empty() {
        m.push(ChatMessage::system(system));
    }
    m.push(ChatMessage::user(query));
    m.extend(history.iter().map(|h| ChatMessage::assistant(h.as_str())));
    m
}

pub(crate) fn format_state(query: &str, history: &[String]) -> String {
    let mut s = format!("Question: {query}\nResponses:");
    for (i, h) in history.iter().enumerate() {
        s.push_str(&format!("\n{}. {h}", i + 1));
    }
    s
}

/// Scores a state with the evaluation prompt; unparseable replies score 0.5.
pub(crate) fn evaluate(s: &mut Session<'_>, query: &str, history: &[String], t: f64) -> Result<(f64, bool), BackendError> {
    let reply = s.call(vec![ChatMessage::system(EVAL_PROMPT), ChatMessage::user(format_state(query, history))], t)?;
    Ok(match parse_unit(&reply) {
        Some(q) => (q, false),
        None => (0.5, true),
    })
}

struct Search<'s, 'b> {
    s: &'s mut Session<'b>,
    cfg: &'s MctsConfig,
    system: &'s str,
    query: &'s str,
    rng: ChaCha8Rng,
    nodes: Vec<MctsNode>,
    eval_parse_failures: usize,
}

impl Search<'_, '_> {
    fn terminal(&self, history: &[String]) -> bool {
        history.len() > self.cfg.h_max
    }

    fn candidates(&mut self, history: &[String]) -> Result<Vec<String>, BackendError> {
        (0..self.cfg.k_expand)
            .map(|_| self.s.call(state_messages(self.system, self.query, history), self.cfg.temperature))
            .collect()
    }

    fn select(&self) -> Vec<usize> {
        let mut path = vec![0];
        let mut cur = 0;
        while !self.nodes[cur].children.is_empty() {
            let parent_n = self.nodes[cur].n;
            let mut best = self.nodes[cur].children[0];
            let mut best_score = f64::NEG_INFINITY;
            for &ch in &self.nodes[cur].children {
                let score = uct_score(self.nodes[ch].v, self.nodes[ch].n, parent_n, self.cfg.c);
                if score > best_score {
                    best = ch;
                    best_score = score;
                }
            }
            cur = best;
            path.push(cur);
            if self.nodes[cur].n == 0 {
                break;
            }
        }
        path
    }

    /// One rollout; on a backend failure nothing is backpropagated.
    fn rollout(&mut self) -> Result<(), BackendError> {
        let mut path = self.select();
        let mut cur = *path.last().unwrap_or(&0);
        let expandable = self.nodes[cur].children.is_empty()
            && (self.nodes[cur].n > 0 || cur == 0)
            && !self.terminal(&self.nodes[cur].history);
        if expandable {
            let history = self.nodes[cur].history.clone();
            let texts = self.candidates(&history)?;
            for text in texts {
                let mut h = history.clone();
                h.push(text.clone());
                let id = self.nodes.len();
                self.nodes.push(MctsNode { parent: Some(cur), action: text, history: h, n: 0, v: 0.0, children: Vec::new() });
                self.nodes[cur].children.push(id);
            }
            cur = self.nodes[cur].children[0];
            path.push(cur);
        }
        let mut history = self.nodes[cur].history.clone();
        let mut depth = 0;
        while depth < self.cfg.depth && !self.terminal(&history) {
            let options = self.candidates(&history)?;
            let pick = self.rng.random_range(0..options.len());
            history.push(options[pick].clone());
            depth += 1;
        }
        let (q, failed_parse) = evaluate(self.s, self.query, &history, self.cfg.eval_temperature)?;
        self.eval_parse_failures += failed_parse as usize;
        for &i in &path {
            self.nodes[i].n += 1;
            self.nodes[i].v += q;
        }
        Ok(())
    }
}

pub fn mcts_search(mut s: Session<'_>, system: &str, query: &str, cfg: &MctsConfig) -> Result<MctsResult, DecoderError> {
    if cfg.rollouts == 0 || cfg.depth == 0 || cfg.k_expand == 0 {
        return Err(DecoderError::InvalidArgument("mcts needs rollouts, depth and k_expand >= 1".into()));
    }
    let rng = ChaCha8Rng::seed_from_u64(splitmix64(s.seed() ^ 0x6d63_7473));
    let root = MctsNode { parent: None, action: String::new(), history: Vec::new(), n: 0, v: 0.0, children: Vec::new() };
    let mut search = Search { s: &mut s, cfg, system, query, rng, nodes: vec![root], eval_parse_failures: 0 };
    let (mut completed, mut aborted) = (0, 0);
    let mut last_err = None;
    for _ in 0..cfg.rollouts {
        match search.rollout() {
            Ok(()) => completed += 1,
            Err(e) => {
                aborted += 1;
                last_err = Some(e);
            }
        }
        debug_assert_eq!(search.nodes[0].n as usize, completed);
    }
    let Search { nodes, eval_parse_failures, .. } = search;
    let mut best = None;
    let mut best_mean = f64::NEG_INFINITY;
    for &ch in &nodes[0].children {
        if nodes[ch].n > 0 {
            let mean = nodes[ch].v / nodes[ch].n as f64;
            if mean > best_mean {
                best_mean = mean;
                best = Some(ch);
            }
        }
    }
    let Some(best) = best else {
        return Err(DecoderError::AllFailed(last_err.map(|e| e.to_string()).unwrap_or_else(|| "no rollout".into())));
    };
    let answer = nodes[best].action.clone();
    let decision = serde_json::json!({
        "nodes": nodes,
        "completed": completed,
        "aborted": aborted,
        "eval_parse_failures": eval_parse_failures,
        "best": best,
        "answer": answer,
    });
    let trace = s.finish("mcts", decision);
    Ok(MctsResult { outcome: Outcome { answer, trace }, nodes, completed, aborted, eval_parse_failures, best })
}
