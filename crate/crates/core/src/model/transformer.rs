//! Pre-norm decoder-only transformer with fixed pseudo-random weights.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::scalar::{dot, Real};

use super::cache::KvCache;
use super::config::ModelConfig;
use super::rng::uniform;
use super::trace::{AttnRow, StepTrace};
use super::vocab::TokenId;
use super::ModelError;

#[derive(Debug, Clone)]
pub struct Layer<T> {
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
    pub w1: Vec<T>,
    pub w2: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    /// `[V][d]`.
    pub embed: Vec<T>,
    pub layers: Vec<Layer<T>>,
    /// Untied output head, `[V][d]`.
    pub w_out: Vec<T>,
}

fn fill<T: Real>(seed: u64, stream: u64, len: usize, scale: f64) -> Vec<T> {
    (0..len as u64).map(|i| T::c(uniform(seed, stream, i) * scale)).collect()
}

/// `out[o] = Σ_i w[o·cols + i]·x[i]`.
pub fn matvec<T: Real>(w: &[T], x: &[T], rows: usize) -> Vec<T> {
    let cols = x.len();
    debug_assert_eq!(w.len(), rows * cols);
    (0..rows).map(|o| dot(&w[o * cols..(o + 1) * cols], x)).collect()
}

/// Parameter-free RMS normalization.
pub fn rms_norm<T: Real>(x: &[T]) -> Vec<T> {
    let n = T::c(x.len() as f64);
    let ms = x.iter().map(|&v| v * v).sum::<T>() / n;
    let inv = T::one() / (ms + T::c(1e-6)).sqrt();
    x.iter().map(|&v| v * inv).collect()
}

fn gelu<T: Real>(x: T) -> T {
    let k = T::c((2.0 / std::f64::consts::PI).sqrt());
    T::c(0.5) * x * (T::one() + (k * (x + T::c(0.044715) * x * x * x)).tanh())
}

/// In-place numerically stable softmax.
pub fn softmax_in_place<T: Real>(s: &mut [T]) {
    let m = s.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in s.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in s.iter_mut() {
        *v /= z;
    }
}

fn positional<T: Real>(pos: usize, d: usize) -> Vec<T> {
    (0..d)
        .map(|i| {
            let k = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * k / d as f64);
            T::c(if i % 2 == 0 { angle.sin() } else { angle.cos() })
        })
        .collect()
}

impl<T: Real> Model<T> {
    pub fn build(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.model_dim;
        let ff = config.ff_dim();
        let v = config.vocab_size;
        let s = config.seed;
        let sqrt3 = 3f64.sqrt();
        let scale = |fan_in: usize| sqrt3 / (fan_in as f64).sqrt();
        let embed = fill(s, 1, v * d, sqrt3);
        let layers = (0..config.num_layers as u64)
            .map(|l| {
                let base = 16 + 8 * l;
                Layer {
                    wq: fill(s, base, d * d, scale(d)),
                    wk: fill(s, base + 1, d * d, scale(d)),
                    wv: fill(s, base + 2, d * d, scale(d)),
                    wo: fill(s, base + 3, d * d, scale(d)),
                    w1: fill(s, base + 4, ff * d, scale(d)),
                    w2: fill(s, base + 5, d * ff, scale(ff)),
                }
            })
            .collect();
        let w_out = fill(s, 2, v * d, scale(d));
        Ok(Self { config, embed, layers, w_out })
    }

    pub fn new_cache(&self) -> KvCache<T> {
        KvCache::new(self.config.num_layers, self.config.num_heads, self.config.head_dim)
    }

    /// SHA-256 over every weight in little-endian order.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::with_capacity(8 * self.embed.len());
        let mut push = |xs: &[T]| {
            for &x in xs {
                x.write_le(&mut bytes);
            }
        };
        push(&self.embed);
        for l in &self.layers {
            for t in [&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2] {
                push(t);
            }
        }
        push(&self.w_out);
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Logits from a final normalized hidden state.
    pub fn head(&self, final_hidden: &[T]) -> Vec<T> {
        matvec(&self.w_out, final_hidden, self.config.vocab_size)
    }

    /// Processes `tokens[cache.total_processed..]` and returns the trace of
    /// the last position. Without a cache the whole sequence is processed
    /// through a fresh one, so both paths share the same arithmetic.
    pub fn forward(
        &self,
        tokens: &[TokenId],
        cache: Option<&mut KvCache<T>>,
    ) -> Result<StepTrace<T>, ModelError> {
        let mut local;
        let cache = match cache {
            Some(c) => c,
            None => {
                local = self.new_cache();
                &mut local
            }
        };
        self.advance(tokens, cache)?;
        Ok(Self::trace_of(cache))
    }

    /// Like [`Model::forward`] but leaves the results in the cache without
    /// building a trace.
    pub fn advance(&self, tokens: &[TokenId], cache: &mut KvCache<T>) -> Result<(), ModelError> {
        let cfg = &self.config;
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if tokens.len() > cfg.max_seq {
            return Err(ModelError::SequenceTooLong { len: tokens.len(), max: cfg.max_seq });
        }
        if cache.num_layers() != cfg.num_layers
            || cache.num_heads != cfg.num_heads
            || cache.head_dim != cfg.head_dim
        {
            return Err(ModelError::CacheMismatch("cache built for a different shape".into()));
        }
        if cache.total_processed > tokens.len() || cache.tokens[..] != tokens[..cache.total_processed] {
            return Err(ModelError::CacheMismatch("cache is not a prefix of the input".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(ModelError::UnknownToken(bad));
        }
        for &tok in &tokens[cache.total_processed..] {
            self.step(tok, cache);
        }
        Ok(())
    }

    pub fn trace_of(cache: &KvCache<T>) -> StepTrace<T> {
        StepTrace {
            tokens: cache.tokens.clone(),
            logits: cache.last_logits.clone(),
            final_hidden: cache.last_final_hidden.clone(),
            attention: cache.layers.iter().map(|l| l.attn.clone()).collect(),
            hidden_by_pos: cache.hidden.clone(),
            new_kv: cache.last_kv.clone(),
        }
    }

    fn step(&self, tok: TokenId, cache: &mut KvCache<T>) {
        let cfg = &self.config;
        let d = cfg.model_dim;
        let dh = cfg.head_dim;
        let heads = cfg.num_heads;
        let pos = cache.total_processed;
        let scale = T::one() / T::c(dh as f64).sqrt();

        let emb = &self.embed[tok as usize * d..(tok as usize + 1) * d];
        let pe = positional::<T>(pos, d);
        let mut x: Vec<T> = emb.iter().zip(&pe).map(|(&a, &b)| a + b).collect();
        let mut hidden: Vec<Arc<[T]>> = Vec::with_capacity(cfg.num_layers + 1);
        hidden.push(x.clone().into());
        let mut new_kv = Vec::with_capacity(cfg.num_layers);

        for (layer, lc) in self.layers.iter().zip(cache.layers.iter_mut()) {
            let xn = rms_norm(&x);
            let q = matvec(&layer.wq, &xn, d);
            let k = matvec(&layer.wk, &xn, d);
            let v = matvec(&layer.wv, &xn, d);
            for h in 0..heads {
                let r = h * dh..(h + 1) * dh;
                lc.queries[h].extend_from_slice(&q[r.clone()]);
                lc.keys[h].extend_from_slice(&k[r.clone()]);
                lc.values[h].extend_from_slice(&v[r]);
            }
            lc.attn.positions.push(pos);
            let n = lc.attn.positions.len();

            let mut attn_out = vec![T::zero(); d];
            for h in 0..heads {
                let qh = &q[h * dh..(h + 1) * dh];
                let keys = &lc.keys[h];
                let vals = &lc.values[h];
                let mut s: Vec<T> =
                    (0..n).map(|j| dot(qh, &keys[j * dh..(j + 1) * dh]) * scale).collect();
                softmax_in_place(&mut s);
                let out = &mut attn_out[h * dh..(h + 1) * dh];
                for (j, &a) in s.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&vals[j * dh..(j + 1) * dh]) {
                        *o += a * vv;
                    }
                }
                lc.outputs[h].extend_from_slice(out);
                lc.attn.heads[h].push(AttnRow::new(s));
            }
            cache.dot_products += (heads * n) as u64;

            let y = matvec(&layer.wo, &attn_out, d);
            for (a, b) in x.iter_mut().zip(&y) {
                *a += *b;
            }
            let xn2 = rms_norm(&x);
            let mut f = matvec(&layer.w1, &xn2, cfg.ff_dim());
            for a in f.iter_mut() {
                *a = gelu(*a);
            }
            let f2 = matvec(&layer.w2, &f, d);
            for (a, b) in x.iter_mut().zip(&f2) {
                *a += *b;
            }
            hidden.push(x.clone().into());
            new_kv.push((k, v));
        }

        let hf = rms_norm(&x);
        cache.last_logits = self.head(&hf);
        cache.last_final_hidden = hf;
        cache.last_kv = new_kv;
        cache.hidden.push(hidden.into());
        cache.tokens.push(tok);
        cache.total_processed += 1;
    }
}
