use std::collections::BTreeMap;

use super::corpus::{tokenize, Corpus, Document};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub docs: Vec<Document>,
    /// term → (doc index, term frequency), doc indices ascending.
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
    pub doc_len: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored<'a> {
    pub doc: &'a Document,
    pub score: f64,
}

impl Index {
    pub fn build(corpus: &Corpus) -> Self {
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(corpus.docs.len());
        for (i, d) in corpus.docs.iter().enumerate() {
            let toks = tokenize(&format!("{} {}", d.title, d.text));
            doc_len.push(toks.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((i as u32, c));
            }
        }
        Self { docs: corpus.docs.clone(), postings, doc_len }
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_len(&self) -> f64 {
        if self.doc_len.is_empty() {
            return 0.0;
        }
        self.doc_len.iter().map(|&l| l as f64).sum::<f64>() / self.doc_len.len() as f64
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn tf(&self, term: &str, doc: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&(doc as u32), |&(d, _)| d).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    fn term_weight(&self, tf: u32, doc: usize, avg: f64) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - BM25_B + BM25_B * self.doc_len[doc] as f64 / avg;
        tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm)
    }
}

/// Okapi BM25 of one document; repeated query terms count once each time.
pub fn bm25_score(index: &Index, query_terms: &[String], doc: usize) -> f64 {
    let avg = index.avg_len();
    query_terms
        .iter()
        .map(|t| {
            let tf = index.tf(t, doc);
            if tf == 0 {
                0.0
            } else {
                index.idf(t) * index.term_weight(tf, doc, avg)
            }
        })
        .sum()
}

/// Ranks every document by descending score, ties by id ascending. A query
/// with no indexed term returns nothing.
pub fn retrieve<'a>(index: &'a Index, query: &str, top_n: usize) -> Vec<Scored<'a>> {
    let terms = tokenize(query);
    if !terms.iter().any(|t| index.postings.contains_key(t)) {
        return Vec::new();
    }
    let avg = index.avg_len();
    let mut scores = vec![0.0; index.n_docs()];
    for t in &terms {
        if let Some(p) = index.postings.get(t) {
            let idf = index.idf(t);
            for &(d, tf) in p {
                scores[d as usize] += idf * index.term_weight(tf, d as usize, avg);
            }
        }
    }
    let mut order: Vec<usize> = (0..index.n_docs()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| index.docs[a].id.cmp(&index.docs[b].id))
    });
    order
        .into_iter()
        .take(top_n)
        .map(|i| Scored { doc: &index.docs[i], score: scores[i] })
        .collect()
}
