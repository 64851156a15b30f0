use serde::Serialize;

use crate::model::{KvCache, TokenId, Vocab};
use crate::Model;
use crate::sampling::{softmax_temperature, top_two};

use super::similarity::{cluster_responses, similarity_matrix};
use super::DecoderError;

/// Minimal decoding interface so path search runs on the toy model and on
/// hand-written tables alike.
pub trait PathModel {
    type State: Clone;
    fn vocab_size(&self) -> usize;
    fn start(&self, prompt: &[TokenId]) -> Result<Self::State, DecoderError>;
    fn logits(&self, state: &Self::State) -> Vec<f64>;
    fn push(&self, state: &mut Self::State, tok: TokenId) -> Result<(), DecoderError>;
    fn is_eos(&self, tok: TokenId) -> bool;
    fn render(&self, tokens: &[TokenId]) -> String;
}

pub struct ToyPathModel<'a> {
    model: &'a Model,
    vocab: &'a Vocab,
}

impl<'a> ToyPathModel<'a> {
    pub fn new(model: &'a Model, vocab: &'a Vocab) -> Self {
        Self { model, vocab }
    }
}

impl PathModel for ToyPathModel<'_> {
    type State = KvCache<f64>;

    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn start(&self, prompt: &[TokenId]) -> Result<KvCache<f64>, DecoderError> {
        let mut cache = self.model.new_cache();
        self.model.advance(prompt, &mut cache).map_err(crate::engine::EngineError::from)?;
        Ok(cache)
    }

    fn logits(&self, state: &KvCache<f64>) -> Vec<f64> {
        state.last_logits.clone()
    }

    fn push(&self, state: &mut KvCache<f64>, tok: TokenId) -> Result<(), DecoderError> {
        let mut tokens = state.tokens.clone();
        tokens.push(tok);
        self.model.advance(&tokens, state).map_err(crate::engine::EngineError::from)?;
        Ok(())
    }

    fn is_eos(&self, tok: TokenId) -> bool {
        self.vocab.eos() == Some(tok)
    }

    fn render(&self, tokens: &[TokenId]) -> String {
        self.vocab.decode(tokens)
    }
}

type TableFn = dyn Fn(&[TokenId]) -> Vec<f64> + Send + Sync;

/// Logits as an explicit function of the full token sequence.
pub struct MicroModel {
    pub vocab_size: usize,
    pub eos: Option<TokenId>,
    pub table: Box<TableFn>,
    /// Surface strings; ids render as `t{id}` without them.
    pub names: Option<Vec<String>>,
}

impl PathModel for MicroModel {
    type State = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn start(&self, prompt: &[TokenId]) -> Result<Vec<TokenId>, DecoderError> {
        Ok(prompt.to_vec())
    }

    fn logits(&self, state: &Vec<TokenId>) -> Vec<f64> {
        (self.table)(state)
    }

    fn push(&self, state: &mut Vec<TokenId>, tok: TokenId) -> Result<(), DecoderError> {
        state.push(tok);
        Ok(())
    }

    fn is_eos(&self, tok: TokenId) -> bool {
        self.eos == Some(tok)
    }

    fn render(&self, tokens: &[TokenId]) -> String {
        let word = |t: &TokenId| match &self.names {
            Some(n) => n[*t as usize].clone(),
            None => format!("t{t}"),
        };
        tokens.iter().map(word).collect::<Vec<_>>().join(" ")
    }
}

/// `(p1 - p2) * (1 - alpha * j / l_max)` with `j` counted from 0.
pub fn token_reliability(p1: f64, p2: f64, j: usize, l_max: usize, alpha: f64) -> Result<f64, DecoderError> {
    if p2 > p1 || p2 < 0.0 || p1 > 1.0 {
        return Err(DecoderError::InvalidArgument(format!("need 0 <= p2 <= p1 <= 1, got p1={p1} p2={p2}")));
    }
    if !(0.0..=1.0).contains(&alpha) || l_max == 0 {
        return Err(DecoderError::InvalidArgument(format!("bad damping alpha={alpha} l_max={l_max}")));
    }
    Ok((p1 - p2) * damping(j, l_max, alpha))
}

fn damping(j: usize, l_max: usize, alpha: f64) -> f64 {
    1.0 - alpha * j as f64 / l_max as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct CotToken {
    pub id: TokenId,
    pub p1: f64,
    pub p2: f64,
    pub reliability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CotPath {
    pub tokens: Vec<CotToken>,
    pub text: String,
    /// Damping-weighted mean of token reliabilities.
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CotDecodeResult {
    pub paths: Vec<CotPath>,
    /// Indices of paths that survive consolidation (all paths without it).
    pub kept: Vec<usize>,
    pub winner: usize,
}

fn top_k_ids(p: &[f64], k: usize) -> Vec<TokenId> {
    let mut ids: Vec<usize> = (0..p.len()).collect();
    ids.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    ids.into_iter().take(k).map(|i| i as TokenId).collect()
}

fn argmax_low_id(p: &[f64]) -> TokenId {
    top_k_ids(p, 1)[0]
}

/// Branches on the `k` most probable first tokens, continues each branch
/// greedily for up to `max_len` tokens, and picks the most reliable path.
pub fn cot_decode<M: PathModel>(
    m: &M,
    prompt: &[TokenId],
    k: usize,
    alpha: f64,
    max_len: usize,
    consolidate: bool,
) -> Result<CotDecodeResult, DecoderError> {
    let v = m.vocab_size();
    if k == 0 || k > v {
        return Err(DecoderError::InvalidArgument(format!("k={k} must lie in 1..={v}")));
    }
    if max_len == 0 {
        return Err(DecoderError::InvalidArgument("max_len must be >= 1".into()));
    }
    let root = m.start(prompt)?;
    let dist = |s: &M::State| -> Result<Vec<f64>, DecoderError> {
        softmax_temperature(&m.logits(s), 1.0).map_err(|e| DecoderError::InvalidArgument(e.to_string()))
    };
    let p0 = dist(&root)?;
    let mut paths = Vec::with_capacity(k);
    for first in top_k_ids(&p0, k) {
        let mut state = root.clone();
        let mut p = p0.clone();
        let mut tok = first;
        let mut tokens = Vec::new();
        loop {
            let (p1, p2) = top_two(&p);
            let j = tokens.len();
            let reliability = token_reliability(p1, p2, j, max_len, alpha)?;
            tokens.push(CotToken { id: tok, p1, p2, reliability });
            if m.is_eos(tok) || tokens.len() >= max_len {
                break;
            }
            m.push(&mut state, tok)?;
            p = dist(&state)?;
            tok = argmax_low_id(&p);
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (j, t) in tokens.iter().enumerate() {
            let w = damping(j, max_len, alpha);
            num += w * t.reliability;
            den += w;
        }
        let score = if den > 0.0 { num / den } else { 0.0 };
        let ids: Vec<TokenId> = tokens.iter().map(|t| t.id).collect();
        paths.push(CotPath { text: m.render(&ids), tokens, score });
    }

    let kept: Vec<usize> = if consolidate {
        let texts: Vec<String> = paths.iter().map(|p| p.text.clone()).collect();
        cluster_responses(&similarity_matrix(&texts), 0.9)
            .iter()
            .map(|c| best_of(&paths, &c.members))
            .collect()
    } else {
        (0..paths.len()).collect()
    };
    let winner = best_of(&paths, &kept);
    Ok(CotDecodeResult { paths, kept, winner })
}

/// Highest-scoring index among `idx`, earliest on ties.
fn best_of(paths: &[CotPath], idx: &[usize]) -> usize {
    let mut best = idx[0];
    for &i in &idx[1..] {
        if paths[i].score > paths[best].score {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reliability_examples() {
        assert_eq!(token_reliability(0.4, 0.4, 3, 10, 0.5).unwrap(), 0.0);
        assert!((token_reliability(0.9, 0.1, 0, 10, 0.5).unwrap() - 0.8).abs() < 1e-12);
        assert!((token_reliability(0.9, 0.1, 5, 10, 0.5).unwrap() - 0.6).abs() < 1e-12);
        assert!(token_reliability(0.1, 0.9, 0, 10, 0.5).is_err());
    }

    #[test]
    fn k_one_is_greedy() {
        let m = MicroModel {
            vocab_size: 3,
            eos: Some(0),
            table: Box::new(|s: &[TokenId]| if s.len() >= 2 { vec![5.0, 0.0, 0.0] } else { vec![0.0, 0.0, 3.0] }),
            names: None,
        };
        let r = cot_decode(&m, &[1], 1, 0.5, 5, false).unwrap();
        let ids: Vec<TokenId> = r.paths[0].tokens.iter().map(|t| t.id).collect();
        assert_eq!(ids, vec![2, 0]);
        assert_eq!(r.winner, 0);
    }

    #[test]
    fn k_above_vocab_rejected() {
        let m = MicroModel { vocab_size: 2, eos: None, table: Box::new(|_: &[TokenId]| vec![0.0, 0.0]), names: None };
        assert!(cot_decode(&m, &[0], 3, 0.5, 2, false).is_err());
    }
}
