//! Local corpus with Okapi BM25 ranking.

mod bm25;
mod corpus;
mod persist;

use serde::{Deserialize, Serialize};

pub use bm25::{bm25_score, retrieve, Index, Scored, BM25_B, BM25_K1};
pub use corpus::{ingest_corpus, parse_corpus, tokenize, Corpus, Document};
pub use persist::{load_index, save_index, INDEX_MAGIC, INDEX_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("bad index file: {0}")]
    BadIndex(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub corpus_path: Option<String>,
    pub top_n: usize,
    /// Context budget in whitespace-separated words.
    pub context_budget: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { corpus_path: None, top_n: 2, context_budget: 48 }
    }
}

/// `[title]\ntext` blocks separated by blank lines, cut on a block boundary
/// once `budget` words are used. A first block longer than the budget is
/// truncated to it.
pub fn format_context(docs: &[&Document], budget: usize) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut used = 0;
    for d in docs {
        let block = format!("[{}]\n{}", d.title, d.text);
        let words = block.split_whitespace().count();
        if used + words <= budget {
            used += words;
            out.push(block);
            continue;
        }
        if out.is_empty() {
            let mut first = format!("[{}]", d.title);
            let mut n = first.split_whitespace().count();
            let mut body = Vec::new();
            for w in d.text.split_whitespace() {
                if n >= budget {
                    break;
                }
                body.push(w);
                n += 1;
            }
            if n > budget {
                // Title alone is over budget.
                first = first.split_whitespace().take(budget).collect::<Vec<_>>().join(" ");
            }
            first.push('\n');
            first.push_str(&body.join(" "));
            out.push(first);
        }
        break;
    }
    out.join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, title: &str, text: &str) -> Document {
        Document { id: id.into(), title: title.into(), text: text.into() }
    }

    #[test]
    fn context_blocks() {
        let a = doc("a", "Sun", "the sun is a star");
        let b = doc("b", "Moon", "the moon orbits earth");
        assert_eq!(format_context(&[&a], 100), "[Sun]\nthe sun is a star");
        assert_eq!(format_context(&[&a, &b], 7), "[Sun]\nthe sun is a star");
        assert_eq!(format_context(&[&a, &b], 3), "[Sun]\nthe sun");
        assert_eq!(format_context(&[&a, &b], 100), "[Sun]\nthe sun is a star\n\n[Moon]\nthe moon orbits earth");
    }
}
