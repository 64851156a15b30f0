use serde::Serialize;

use super::similarity::{cluster_responses, similarity_matrix, Cluster};
use super::{messages, DecoderError, Outcome, Session};

/// Rater system prompt.
pub const RATING_PROMPT: &str =
    "Rate the following response from 0-10 based on clarity, accuracy, and helpfulness. Respond with ONLY a number";

/// First integer in `[0, 10]` appearing in `text`.
pub fn parse_rating(text: &str) -> Option<u32> {
    let mut digits = String::new();
    let flush = |d: &mut String| -> Option<u32> {
        let v = if d.is_empty() { None } else { d.parse::<u32>().ok().filter(|&v| v <= 10) };
        d.clear();
        v
    };
    for c in text.chars() {
        if c.is_ascii_digit() {
            digits.push(c);
        } else if let Some(v) = flush(&mut digits) {
            return Some(v);
        }
    }
    flush(&mut digits)
}

/// First number in `[0, 1]` appearing in `text`.
pub fn parse_unit(text: &str) -> Option<f64> {
    let bytes: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() || (bytes[i] == '.' && bytes.get(i + 1).is_some_and(|c| c.is_ascii_digit())) {
            let start = i;
            let mut seen_dot = false;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || (bytes[i] == '.' && !seen_dot)) {
                seen_dot |= bytes[i] == '.';
                i += 1;
            }
            let s: String = bytes[start..i].iter().collect();
            if let Ok(v) = s.trim_end_matches('.').parse::<f64>() {
                if (0.0..=1.0).contains(&v) {
                    return Some(v);
                }
            }
        } else {
            i += 1;
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct SelfConsistency {
    pub outcome: Outcome,
    pub candidates: Vec<String>,
    pub similarity: Vec<Vec<f64>>,
    pub clusters: Vec<Cluster>,
    pub winner: usize,
}

/// `k` samples at temperature `t`, greedy clustering at `tau`, largest
/// cluster wins; ties go to higher coherence, then the earlier cluster.
pub fn self_consistency(
    mut s: Session<'_>,
    system: &str,
    query: &str,
    k: usize,
    t: f64,
    tau: f64,
) -> Result<SelfConsistency, DecoderError> {
    if k == 0 {
        return Err(DecoderError::InvalidArgument("k must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(DecoderError::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    let mut candidates = Vec::new();
    let mut last_err = None;
    for _ in 0..k {
        match s.call(messages(system, query.into()), t) {
            Ok(text) => candidates.push(text),
            Err(e) => last_err = Some(e),
        }
    }
    if candidates.is_empty() {
        return Err(DecoderError::AllFailed(last_err.map(|e| e.to_string()).unwrap_or_default()));
    }
    let similarity = similarity_matrix(&candidates);
    let clusters = cluster_responses(&similarity, tau);
    let mut winner = 0;
    for (i, c) in clusters.iter().enumerate().skip(1) {
        let w = &clusters[winner];
        if c.members.len() > w.members.len() || (c.members.len() == w.members.len() && c.coherence > w.coherence) {
            winner = i;
        }
    }
    let answer = candidates[clusters[winner].members[0]].clone();
    let decision = serde_json::json!({
        "candidates": candidates,
        "similarity": similarity,
        "clusters": clusters,
        "winner_cluster": winner,
        "answer": answer,
    });
    let trace = s.finish("self-consistency", decision);
    Ok(SelfConsistency { outcome: Outcome { answer, trace }, candidates, similarity, clusters, winner })
}

#[derive(Debug, Clone, Serialize)]
pub struct Rated {
    pub text: String,
    pub rating: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct BestOfN {
    pub outcome: Outcome,
    pub candidates: Vec<Rated>,
    pub winner: usize,
    /// No candidate produced a parseable rating.
    pub unrated: bool,
}

/// `k` candidates at `t_gen`, each rated by the same backend at `t_rate`;
/// the highest rating wins, first on ties. Unparseable ratings count as 0.
pub fn best_of_n(
    mut s: Session<'_>,
    system: &str,
    query: &str,
    k: usize,
    t_gen: f64,
    t_rate: f64,
) -> Result<BestOfN, DecoderError> {
    if k == 0 {
        return Err(DecoderError::InvalidArgument("k must be >= 1".into()));
    }
    let mut warnings = Vec::new();
    if t_rate > t_gen {
        warnings.push(format!("rating temperature {t_rate} exceeds generation temperature {t_gen}"));
    }
    let mut texts = Vec::with_capacity(k);
    for _ in 0..k {
        texts.push(s.call(messages(system, query.into()), t_gen)?);
    }
    let mut candidates = Vec::with_capacity(k);
    for text in texts {
        let prompt = messages(RATING_PROMPT, format!("Query: {query}\nResponse: {text}"));
        let reply = s.call(prompt, t_rate)?;
        candidates.push(Rated { text, rating: parse_rating(&reply) });
    }
    let unrated = candidates.iter().all(|c| c.rating.is_none());
    let mut winner = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.rating.unwrap_or(0) > candidates[winner].rating.unwrap_or(0) {
            winner = i;
        }
    }
    let answer = candidates[winner].text.clone();
    let decision = serde_json::json!({
        "candidates": candidates,
        "winner": winner,
        "unrated": unrated,
        "warnings": warnings,
        "answer": answer,
    });
    let trace = s.finish("best-of-n", decision);
    Ok(BestOfN { outcome: Outcome { answer, trace }, candidates, winner, unrated })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rating_parse() {
        assert_eq!(parse_rating("Score: 8/10"), Some(8));
        assert_eq!(parse_rating("great!"), None);
        assert_eq!(parse_rating("42 then 7"), Some(7));
        assert_eq!(parse_rating("10"), Some(10));
    }

    #[test]
    fn unit_parse() {
        assert_eq!(parse_unit("quality 0.85"), Some(0.85));
        assert_eq!(parse_unit("7 out of 10, so .7"), Some(0.7));
        assert_eq!(parse_unit("1"), Some(1.0));
        assert_eq!(parse_unit("none"), None);
    }
}
