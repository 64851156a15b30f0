use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub docs: Vec<Document>,
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn parse_corpus(text: &str) -> Result<Corpus, RetrievalError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let d: Document = serde_json::from_str(line)
            .map_err(|e| RetrievalError::Malformed { line: line_no, msg: e.to_string() })?;
        if d.text.trim().is_empty() {
            return Err(RetrievalError::Malformed { line: line_no, msg: "empty text".into() });
        }
        if !seen.insert(d.id.clone()) {
            return Err(RetrievalError::DuplicateId { line: line_no, id: d.id });
        }
        docs.push(d);
    }
    Ok(Corpus { docs })
}

pub fn ingest_corpus(path: &Path) -> Result<Corpus, RetrievalError> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str) -> String {
        format!(r#"{{"id":"{id}","title":"t","text":"some text"}}"#)
    }

    #[test]
    fn empty_and_valid() {
        assert!(parse_corpus("").unwrap().docs.is_empty());
        let text = [line("a"), line("b"), line("c")].join("\n");
        assert_eq!(parse_corpus(&text).unwrap().docs.len(), 3);
    }

    #[test]
    fn duplicate_names_line() {
        let ids = ["a", "b", "c", "d", "e", "f", "a"];
        let text: Vec<String> = ids.iter().map(|i| line(i)).collect();
        match parse_corpus(&text.join("\n")) {
            Err(RetrievalError::DuplicateId { line, id }) => {
                assert_eq!(line, 7);
                assert_eq!(id, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_names_line() {
        let text = format!("{}\nnot json", line("a"));
        assert!(matches!(parse_corpus(&text), Err(RetrievalError::Malformed { line: 2, .. })));
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Solar-panel, EFFICIENCY!"), vec!["solar", "panel", "efficiency"]);
    }
}
