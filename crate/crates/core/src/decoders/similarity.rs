use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::retrieval::tokenize;

fn word_set(s: &str) -> BTreeSet<String> {
    tokenize(s).into_iter().collect()
}

/// Jaccard similarity of lowercased, punctuation-stripped word sets. Two
/// empty texts count as identical.
pub fn word_overlap(a: &str, b: &str) -> f64 {
    let (x, y) = (word_set(a), word_set(b));
    let union = x.union(&y).count();
    if union == 0 {
        return 1.0;
    }
    x.intersection(&y).count() as f64 / union as f64
}

/// Similarity used to compare sampled responses; same metric as
/// [`word_overlap`].
pub fn response_similarity(a: &str, b: &str) -> f64 {
    word_overlap(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<usize>,
    /// Mean pairwise similarity; 1 for a singleton.
    pub coherence: f64,
}

/// Greedy single pass: each item joins the first cluster whose every member
/// is at least `tau` similar to it, otherwise opens a new cluster.
pub fn cluster_responses(sim: &[Vec<f64>], tau: f64) -> Vec<Cluster> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..sim.len() {
        match groups.iter_mut().find(|g| g.iter().all(|&j| sim[i][j] >= tau)) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
        .into_iter()
        .map(|members| {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    total += sim[i][j];
                    pairs += 1;
                }
            }
            let coherence = if pairs == 0 { 1.0 } else { total / pairs as f64 };
            Cluster { members, coherence }
        })
        .collect()
}

pub(crate) fn similarity_matrix(texts: &[String]) -> Vec<Vec<f64>> {
    texts.iter().map(|a| texts.iter().map(|b| response_similarity(a, b)).collect()).collect()
}
