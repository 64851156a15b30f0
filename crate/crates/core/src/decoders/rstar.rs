use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::model::rng::splitmix64;
use crate::retrieval::tokenize;

use super::mcts::{evaluate, uct_score};
use super::similarity::word_overlap;
use super::{messages, DecoderError, Outcome, Session};

pub const R_STAR_ACTIONS: [&str; 5] = [
    "propose the immediate next step",
    "draft the complete remaining solution",
    "restate the question precisely",
    "decompose into sub-questions",
    "verify and summarize the current reasoning",
];

const STEP_SYSTEM: &str = "Answer the question by reasoning one step at a time.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RStarConfig {
    pub rollouts: usize,
    pub depth: usize,
    pub c: f64,
    /// Re-completion overlap must exceed this for a trajectory to count.
    pub theta: f64,
    pub temperature: f64,
    pub eval_temperature: f64,
}

impl Default for RStarConfig {
    fn default() -> Self {
        Self { rollouts: 8, depth: 3, c: 1.4, theta: 0.7, temperature: 0.8, eval_temperature: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub action: usize,
    pub text: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub conf: f64,
    pub answer: String,
    pub overlap: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone)]
pub struct RStarResult {
    pub outcome: Outcome,
    pub trajectories: Vec<Trajectory>,
    /// No trajectory passed the consistency check.
    pub no_consistent: bool,
}

#[derive(Debug, Clone)]
struct Node {
    steps: Vec<Step>,
    n: u64,
    v: f64,
    children: [Option<usize>; 5],
}

fn step_call(s: &mut Session<'_>, query: &str, steps: &[Step], action: usize, t: f64) -> Result<String, BackendError> {
    let mut prompt = format!("Question: {query}\nReasoning so far:");
    for (i, st) in steps.iter().enumerate() {
        prompt.push_str(&format!("\n{}. {}", i + 1, st.text));
    }
    prompt.push_str(&format!("\nNext: {}.", R_STAR_ACTIONS[action]));
    s.call(messages(STEP_SYSTEM, prompt), t)
}

fn texts(steps: &[Step]) -> Vec<String> {
    steps.iter().map(|s| s.text.clone()).collect()
}

/// Answer with the highest frequency times mean confidence among
/// consistent trajectories; earliest answer wins ties. `None` when no
/// trajectory is consistent.
pub fn score_answers(trajs: &[Trajectory]) -> Option<(String, f64)> {
    let mut groups: Vec<(String, String, usize, f64)> = Vec::new();
    for t in trajs.iter().filter(|t| t.consistent) {
        let key = tokenize(&t.answer).join(" ");
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => {
                g.2 += 1;
                g.3 += t.conf;
            }
            None => groups.push((key, t.answer.clone(), 1, t.conf)),
        }
    }
    let mut best: Option<(String, f64)> = None;
    for (_, answer, freq, total) in groups {
        let score = freq as f64 * (total / freq as f64);
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((answer, score));
        }
    }
    best
}

struct Search<'s, 'b> {
    s: &'s mut Session<'b>,
    cfg: &'s RStarConfig,
    query: &'s str,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Search<'_, '_> {
    fn rollout(&mut self) -> Result<Trajectory, BackendError> {
        let (cfg, query) = (self.cfg, self.query);
        let mut cur = 0;
        let mut path = vec![0];
        while self.nodes[cur].steps.len() < cfg.depth {
            if let Some(a) = self.nodes[cur].children.iter().position(Option::is_none) {
                let mut steps = self.nodes[cur].steps.clone();
                let text = step_call(self.s, query, &steps, a, cfg.temperature)?;
                steps.push(Step { action: a, text });
                let id = self.nodes.len();
                self.nodes.push(Node { steps, n: 0, v: 0.0, children: [None; 5] });
                self.nodes[cur].children[a] = Some(id);
                cur = id;
                path.push(cur);
                break;
            }
            let parent_n = self.nodes[cur].n;
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for ch in self.nodes[cur].children.iter().flatten() {
                let score = uct_score(self.nodes[*ch].v, self.nodes[*ch].n, parent_n, cfg.c);
                if score > best_score {
                    best = *ch;
                    best_score = score;
                }
            }
            cur = best;
            path.push(cur);
        }
        let mut steps = self.nodes[cur].steps.clone();
        while steps.len() < cfg.depth {
            let a = self.rng.random_range(0..R_STAR_ACTIONS.len());
            let text = step_call(self.s, query, &steps, a, cfg.temperature)?;
            steps.push(Step { action: a, text });
        }
        let (conf, _) = evaluate(self.s, query, &texts(&steps), cfg.eval_temperature)?;
        for &i in &path {
            self.nodes[i].n += 1;
            self.nodes[i].v += conf;
        }
        let answer = steps.last().map(|s| s.text.clone()).unwrap_or_default();
        Ok(Trajectory { steps, conf, answer, overlap: 0.0, consistent: false })
    }

    /// Re-runs the second half of a trajectory from its first half and
    /// compares the continuations.
    fn check(&mut self, t: &mut Trajectory) -> Result<(), BackendError> {
        let split = t.steps.len() / 2;
        let mut redo: Vec<Step> = t.steps[..split].to_vec();
        for st in &t.steps[split..] {
            let text = step_call(self.s, self.query, &redo, st.action, self.cfg.temperature)?;
            redo.push(Step { action: st.action, text });
        }
        let original = texts(&t.steps[split..]).join(" ");
        let again = texts(&redo[split..]).join(" ");
        t.overlap = word_overlap(&original, &again);
        t.consistent = t.overlap > self.cfg.theta;
        Ok(())
    }
}

pub fn r_star_search(mut s: Session<'_>, query: &str, cfg: &RStarConfig) -> Result<RStarResult, DecoderError> {
    if cfg.rollouts == 0 || cfg.depth == 0 {
        return Err(DecoderError::InvalidArgument("r* needs rollouts and depth >= 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.theta) {
        return Err(DecoderError::InvalidArgument(format!("theta {} outside [0, 1]", cfg.theta)));
    }
    let rng = ChaCha8Rng::seed_from_u64(splitmix64(s.seed() ^ 0x7273_7461));
    let root = Node { steps: Vec::new(), n: 0, v: 0.0, children: [None; 5] };
    let mut search = Search { s: &mut s, cfg, query, rng, nodes: vec![root] };
    let mut trajectories = Vec::new();
    let mut last_err = None;
    for _ in 0..cfg.rollouts {
        match search.rollout() {
            Ok(mut t) => {
                if let Err(e) = search.check(&mut t) {
                    last_err = Some(e);
                }
                trajectories.push(t);
            }
            Err(e) => last_err = Some(e),
        }
    }
    if trajectories.is_empty() {
        return Err(DecoderError::AllFailed(last_err.map(|e| e.to_string()).unwrap_or_default()));
    }
    let (answer, no_consistent) = match score_answers(&trajectories) {
        Some((a, _)) => (a, false),
        None => {
            let mut best = 0;
            for (i, t) in trajectories.iter().enumerate() {
                if t.conf > trajectories[best].conf {
                    best = i;
                }
            }
            (trajectories[best].answer.clone(), true)
        }
    };
    let decision = serde_json::json!({
        "trajectories": trajectories,
        "no_consistent": no_consistent,
        "answer": answer,
    });
    let trace = s.finish("rstar", decision);
    Ok(RStarResult { outcome: Outcome { answer, trace }, trajectories, no_consistent })
}
