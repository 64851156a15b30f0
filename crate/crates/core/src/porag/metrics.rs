//! Text overlap metrics used by the reward targets and the evaluator.

use std::collections::HashMap;

use crate::model::Vocab;
use crate::retrieval::tokenize;

use super::PoragError;

fn f_measure(overlap: f64, cand: f64, reference: f64) -> f64 {
    if overlap == 0.0 || cand == 0.0 || reference == 0.0 {
        return 0.0;
    }
    let p = overlap / cand;
    let r = overlap / reference;
    2.0 * p * r / (p + r)
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// ROUGE-N F-measure with clipped n-gram counts.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let cc = ngram_counts(&c, n);
    let rc = ngram_counts(&r, n);
    let overlap: usize = cc.iter().map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0))).sum();
    let total = |m: &HashMap<&[String], usize>| m.values().sum::<usize>() as f64;
    f_measure(overlap as f64, total(&cc), total(&rc))
}

pub fn lcs_len<E: PartialEq>(a: &[E], b: &[E]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    f_measure(lcs_len(&c, &r) as f64, c.len() as f64, r.len() as f64)
}

pub fn exact_match(prediction: &str, gold: &str) -> f64 {
    if tokenize(prediction) == tokenize(gold) {
        1.0
    } else {
        0.0
    }
}

/// SQuAD-style token F1 over normalized words.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = tokenize(prediction);
    let g = tokenize(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in &p {
        if let Some(k) = counts.get_mut(t.as_str()) {
            if *k > 0 {
                *k -= 1;
                overlap += 1;
            }
        }
    }
    f_measure(overlap as f64, p.len() as f64, g.len() as f64)
}

/// Cosine of token-count vectors under the model vocabulary.
pub fn bow_cosine(a: &str, b: &str, vocab: &Vocab) -> f64 {
    let count = |s: &str| {
        let mut v = vec![0.0; vocab.len()];
        for id in vocab.encode(s) {
            v[id as usize] += 1.0;
        }
        v
    };
    crate::scalar::cosine(&count(a), &count(b))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FidelityBreakdown {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct QualityBreakdown {
    pub cosine: f64,
    pub em: f64,
    pub f1: f64,
    pub loss: f64,
}

/// `1 − mean(ROUGE-1, ROUGE-2, ROUGE-L)` against the joined documents.
pub fn fidelity_loss(candidate: &str, docs: &[String]) -> FidelityBreakdown {
    if tokenize(candidate).is_empty() {
        return FidelityBreakdown { rouge1: 0.0, rouge2: 0.0, rouge_l: 0.0, loss: 1.0 };
    }
    let reference = docs.join(" ");
    let rouge1 = rouge_n(candidate, &reference, 1);
    let rouge2 = rouge_n(candidate, &reference, 2);
    let rl = rouge_l(candidate, &reference);
    FidelityBreakdown { rouge1, rouge2, rouge_l: rl, loss: 1.0 - (rouge1 + rouge2 + rl) / 3.0 }
}

/// `1 − mean(cosine, EM, F1)` against the reference answer.
pub fn quality_loss(candidate: &str, reference: &str, vocab: &Vocab) -> Result<QualityBreakdown, PoragError> {
    if reference.trim().is_empty() {
        return Err(PoragError::EmptyReference);
    }
    let cosine = bow_cosine(candidate, reference, vocab);
    let em = exact_match(candidate, reference);
    let f1 = token_f1(candidate, reference);
    Ok(QualityBreakdown { cosine, em, f1, loss: 1.0 - (cosine + em + f1) / 3.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rouge_examples() {
        assert!((rouge_n("a b c", "a b d", 1) - 2.0 / 3.0).abs() < 1e-12);
        let same = fidelity_loss("the sun is a star", &["the sun is a star".into()]);
        assert_eq!((same.rouge1, same.rouge2, same.rouge_l, same.loss), (1.0, 1.0, 1.0, 0.0));
        let dis = fidelity_loss("moon rocks", &["the sun".into()]);
        assert_eq!(dis.loss, 1.0);
        assert_eq!(fidelity_loss("", &["x".into()]).loss, 1.0);
    }

    #[test]
    fn lcs_oracle() {
        assert_eq!(lcs_len(&[1, 2, 3, 4], &[2, 4, 3]), 2);
        assert_eq!(lcs_len::<u8>(&[], &[1]), 0);
    }

    #[test]
    fn quality_examples() {
        let v = Vocab::for_size(256);
        let q = quality_loss("paris is the capital", "paris is the capital", &v).unwrap();
        assert!((q.loss).abs() < 1e-12);
        let q = quality_loss("the capital is paris", "paris is the capital", &v).unwrap();
        assert!((q.cosine - 1.0).abs() < 1e-12);
        assert_eq!(q.em, 0.0);
        let q = quality_loss("moon", "paris", &v).unwrap();
        assert!((q.loss - 1.0).abs() < 1e-12);
        assert!(quality_loss("x", " ", &v).is_err());
    }

    #[test]
    fn f1_partial() {
        assert!((token_f1("a b", "a c") - 0.5).abs() < 1e-12);
        assert_eq!(exact_match("The Sun!", "the sun"), 1.0);
    }
}
