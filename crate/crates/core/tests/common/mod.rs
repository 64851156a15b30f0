//! Fixtures shared by several test binaries.

use ragscope::decoders::MicroModel;
use ragscope::model::TokenId;

/// Logits depend on (last token, length) through a fixed pseudo-random table.
pub fn micro(seed: u64) -> MicroModel {
    MicroModel {
        vocab_size: 4,
        eos: Some(3),
        table: Box::new(move |s: &[TokenId]| {
            let last = *s.last().unwrap() as u64;
            (0..4u64)
                .map(|v| {
                    let h = ragscope::model::rng::splitmix64(seed ^ (last << 8) ^ ((s.len() as u64) << 16) ^ v);
                    (h % 1000) as f64 / 250.0
                })
                .collect()
        }),
        names: None,
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Independent recomputation of one forced-first-token path score.
pub fn brute_path(m: &MicroModel, prompt: &[TokenId], first: TokenId, alpha: f64, max_len: usize) -> f64 {
    let mut seq = prompt.to_vec();
    let mut tok = first;
    let mut p = softmax(&(m.table)(&seq));
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..max_len {
        let mut sorted = p.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let f = 1.0 - alpha * j as f64 / max_len as f64;
        num += f * (sorted[0] - sorted[1]) * f;
        den += f;
        if tok == 3 || j + 1 == max_len {
            break;
        }
        seq.push(tok);
        p = softmax(&(m.table)(&seq));
        let mx = p.iter().cloned().fold(f64::MIN, f64::max);
        tok = p.iter().position(|&x| x == mx).unwrap() as TokenId;
    }
    num / den
}
