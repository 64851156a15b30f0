//! Token-by-token decode loop over the toy model, shared by the toy backend,
//! the retrieval-augmented generator, the compression bench and the
//! introspective decoders.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{KvCache, Model, ModelError, StepTrace, TokenId};
use crate::sampling::{apply_sampler, argmax, sample_index, softmax_temperature, top_two, SamplerParams, SamplingError};

/// Repetition controls applied to the logits of generated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Repetition {
    pub penalty: f64,
    pub no_repeat_ngram: usize,
}

impl Default for Repetition {
    fn default() -> Self {
        Self { penalty: 1.0, no_repeat_ngram: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Choice {
    pub token: TokenId,
    /// Probability of `token` under the unmodified softmax at temperature 1.
    pub p_model: f64,
    /// Top-two probabilities of the unmodified softmax.
    pub p1: f64,
    pub p2: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

pub struct Generation<'m> {
    pub model: &'m Model<f64>,
    pub cache: KvCache<f64>,
    pub tokens: Vec<TokenId>,
    pub prompt_len: usize,
    rng: ChaCha8Rng,
}

impl<'m> Generation<'m> {
    pub fn new(model: &'m Model<f64>, prompt: Vec<TokenId>, seed: u64) -> Result<Self, EngineError> {
        if prompt.is_empty() {
            return Err(ModelError::EmptyInput.into());
        }
        Ok(Self {
            model,
            cache: model.new_cache(),
            prompt_len: prompt.len(),
            tokens: prompt,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Runs the model over every token not yet in the cache.
    pub fn advance(&mut self) -> Result<(), EngineError> {
        self.model.advance(&self.tokens, &mut self.cache)?;
        Ok(())
    }

    pub fn logits(&self) -> &[f64] {
        &self.cache.last_logits
    }

    pub fn trace(&self) -> StepTrace<f64> {
        Model::trace_of(&self.cache)
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }

    pub fn push(&mut self, tok: TokenId) {
        self.tokens.push(tok);
    }

    /// Room left before `max_seq`.
    pub fn remaining(&self) -> usize {
        self.model.config.max_seq.saturating_sub(self.tokens.len())
    }

    fn penalized(&self, rep: &Repetition) -> Vec<f64> {
        let mut z = self.logits().to_vec();
        let gen = self.generated();
        if rep.penalty != 1.0 {
            let mut seen = vec![false; z.len()];
            for &t in gen {
                seen[t as usize] = true;
            }
            for (v, s) in z.iter_mut().zip(seen) {
                if s {
                    *v = if *v > 0.0 { *v / rep.penalty } else { *v * rep.penalty };
                }
            }
        }
        let n = rep.no_repeat_ngram;
        if n >= 1 && gen.len() + 1 >= n {
            let prefix = &gen[gen.len() + 1 - n..];
            for w in gen.windows(n) {
                if w[..n - 1] == *prefix {
                    z[w[n - 1] as usize] = f64::NEG_INFINITY;
                }
            }
        }
        z
    }

    fn stats(&self, tok: TokenId) -> Result<(f64, f64, f64), EngineError> {
        let p = softmax_temperature(self.logits(), 1.0)?;
        let (p1, p2) = top_two(&p);
        Ok((p[tok as usize], p1, p2))
    }

    /// Samples the next token from the filtered distribution.
    pub fn choose(&mut self, params: &SamplerParams, rep: &Repetition) -> Result<Choice, EngineError> {
        let z = self.penalized(rep);
        let probs = tempered(&z, params.temperature)?;
        let filtered = apply_sampler(&probs, params)?;
        let token = sample_index(&filtered, &mut self.rng) as TokenId;
        let (p_model, p1, p2) = self.stats(token)?;
        Ok(Choice { token, p_model, p1, p2 })
    }

    pub fn choose_greedy(&mut self, rep: &Repetition) -> Result<Choice, EngineError> {
        let z = self.penalized(rep);
        let token = argmax(&z) as TokenId;
        let (p_model, p1, p2) = self.stats(token)?;
        Ok(Choice { token, p_model, p1, p2 })
    }
}

/// Softmax that tolerates banned (`-inf`) entries.
fn tempered(z: &[f64], temperature: f64) -> Result<Vec<f64>, SamplingError> {
    if z.iter().all(|v| v.is_finite()) {
        return softmax_temperature(z, temperature);
    }
    let finite: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_finite()).collect();
    if finite.is_empty() {
        return Err(SamplingError::Empty);
    }
    let sub: Vec<f64> = finite.iter().map(|&i| z[i]).collect();
    let p = softmax_temperature(&sub, temperature)?;
    let mut out = vec![0.0; z.len()];
    for (&i, v) in finite.iter().zip(p) {
        out[i] = v;
    }
    Ok(out)
}
