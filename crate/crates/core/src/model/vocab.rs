//! Word-level vocabulary with character fallback.
//!
//! The table is: special tokens, punctuation, digits, letters (spelling
//! fallback for unknown words), then a fixed word list. Vocabularies larger
//! than the base table are padded with filler words; smaller ones (micro
//! models used in oracle tests) get synthetic `t{id}` names.

use std::collections::{HashMap, HashSet};

pub type TokenId = u32;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

const SPECIALS: [&str; 4] = [PAD, BOS, EOS, UNK];

const PUNCTUATION: [&str; 14] = [
    ".", ",", "?", "!", ":", ";", "'", "\"", "(", ")", "-", "[", "]", "/",
];

/// Default stopword set. Also written out by `default_stopwords_text` so the
/// list can be edited and reloaded from a file.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "to", "in", "on", "at", "for", "with", "by", "from", "is", "are",
    "was", "were", "be", "been", "it", "this", "that", "these", "those", "and", "or", "but",
    "not", "as", "what", "which", "who", "how", "when", "where", "why", "do", "does", "did",
    "has", "have", "had", "he", "she", "they", "we", "you", "i", "his", "her", "their", "its",
    "our", "your", "me", "him", "them", "so", "if", "then", "than", "there", "here", "can",
    "will", "would", "should", "could", "about", "into", "also", "very", "let's",
];

const CONTENT_WORDS: &[&str] = &[
    "question", "answer", "context", "system", "user", "assistant", "solar", "panel",
    "efficiency", "energy", "photosynthesis", "plant", "light", "water", "carbon", "oxygen",
    "cell", "river", "mountain", "city", "capital", "country", "france", "paris", "berlin",
    "germany", "london", "england", "italy", "rome", "spain", "madrid", "ocean", "planet",
    "earth", "mars", "moon", "sun", "star", "galaxy", "physics", "chemistry", "biology",
    "history", "war", "king", "queen", "empire", "language", "music", "art", "science",
    "computer", "network", "data", "model", "memory", "cache", "token", "tokens", "attention",
    "retrieval", "search", "query", "document", "reason", "step", "final", "initial",
    "reading", "analysis", "rate", "response", "score", "think", "thinking", "reflection",
    "output", "observation", "observations", "strategy", "plan", "verify", "summarize",
    "propose", "draft", "restate", "decompose", "next", "complete", "solution", "remaining",
    "current", "reasoning", "gold", "silver", "iron", "copper", "metal", "temperature",
    "pressure", "speed", "distance", "time", "year", "born", "wrote", "book", "author",
    "president", "team", "game", "formulate", "from", "based", "read", "again", "carefully",
    "original", "break", "down", "key", "components", "here", "critique", "candidates",
    "synthesize", "improved", "quality", "scale",
];

const NUMBERS: &[&str] = &["10", "100", "1984", "2024"];

#[derive(Debug, Clone)]
pub struct TokenFlags {
    pub is_stopword: bool,
    pub is_numeric: bool,
    pub is_punctuation: bool,
    pub is_special: bool,
}

#[derive(Debug, Clone)]
pub struct Vocab {
    strings: Vec<String>,
    ids: HashMap<String, TokenId>,
    flags: Vec<TokenFlags>,
}

fn is_numeric_str(s: &str) -> bool {
    !s.is_empty() && s.parse::<f64>().is_ok() && s.chars().any(|c| c.is_ascii_digit())
}

fn is_punct_str(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_punctuation())
}

fn base_table() -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let letters: Vec<String> = ('a'..='z').map(|c| c.to_string()).collect();
    let digits: Vec<String> = ('0'..='9').map(|c| c.to_string()).collect();
    let groups: [Vec<String>; 7] = [
        SPECIALS.iter().map(|s| s.to_string()).collect(),
        PUNCTUATION.iter().map(|s| s.to_string()).collect(),
        digits,
        letters,
        NUMBERS.iter().map(|s| s.to_string()).collect(),
        STOPWORDS.iter().map(|s| s.to_string()).collect(),
        CONTENT_WORDS.iter().map(|s| s.to_string()).collect(),
    ];
    for g in groups {
        for s in g {
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
    }
    out
}

impl Vocab {
    pub fn for_size(vocab_size: usize) -> Self {
        let base = base_table();
        let strings: Vec<String> = if vocab_size >= base.len() {
            let mut s = base;
            let mut filler = 0usize;
            while s.len() < vocab_size {
                s.push(format!("w{filler}"));
                filler += 1;
            }
            s
        } else {
            (0..vocab_size).map(|i| format!("t{i}")).collect()
        };
        Self::from_strings(strings)
    }

    pub fn from_strings(strings: Vec<String>) -> Self {
        let stop: HashSet<&str> = STOPWORDS.iter().copied().collect();
        let mut ids = HashMap::with_capacity(strings.len());
        let mut flags = Vec::with_capacity(strings.len());
        for (i, s) in strings.iter().enumerate() {
            let prev = ids.insert(s.clone(), i as TokenId);
            assert!(prev.is_none(), "duplicate vocabulary entry {s:?}");
            let is_special = SPECIALS.contains(&s.as_str());
            flags.push(TokenFlags {
                is_stopword: stop.contains(s.as_str()),
                is_numeric: is_numeric_str(s),
                is_punctuation: !is_special && is_punct_str(s),
                is_special,
            });
        }
        Self { strings, ids, flags }
    }

    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    pub fn token_str(&self, id: TokenId) -> Option<&str> {
        self.strings.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, s: &str) -> Option<TokenId> {
        self.ids.get(s).copied()
    }

    pub fn flags(&self, id: TokenId) -> Option<&TokenFlags> {
        self.flags.get(id as usize)
    }

    pub fn eos(&self) -> Option<TokenId> {
        self.id(EOS)
    }

    pub fn bos(&self) -> Option<TokenId> {
        self.id(BOS)
    }

    fn unk_or_zero(&self) -> TokenId {
        self.id(UNK).unwrap_or(0)
    }

    /// Lowercases, splits into word and punctuation pieces, and spells out
    /// words missing from the table letter by letter.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for piece in split_pieces(text) {
            if let Some(id) = self.id(&piece) {
                out.push(id);
                continue;
            }
            for ch in piece.chars() {
                out.push(self.id(&ch.to_string()).unwrap_or_else(|| self.unk_or_zero()));
            }
        }
        out
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            let s = self.token_str(id).unwrap_or(UNK);
            if s == PAD || s == BOS || s == EOS {
                continue;
            }
            let attach = matches!(s, "." | "," | "?" | "!" | ":" | ";" | ")" | "]");
            if !out.is_empty() && !attach && !out.ends_with('(') && !out.ends_with('[') {
                out.push(' ');
            }
            out.push_str(s);
        }
        out
    }

    pub fn strings(&self) -> &[String] {
        &self.strings
    }
}

/// Splits text into lowercase word pieces and single punctuation marks.
/// Special tokens written literally (`<eos>`) are kept whole.
pub fn split_pieces(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut word = String::new();
    let chars: Vec<char> = lower.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '<' {
            if let Some(end) = chars[i..].iter().position(|&x| x == '>') {
                let cand: String = chars[i..=i + end].iter().collect();
                if SPECIALS.contains(&cand.as_str()) {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    out.push(cand);
                    i += end + 1;
                    continue;
                }
            }
        }
        if c.is_alphanumeric() || (c == '\'' && !word.is_empty()) {
            word.push(c);
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if c.is_ascii_punctuation() {
                out.push(c.to_string());
            }
        }
        i += 1;
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

pub fn default_stopwords_text() -> String {
    let mut s = STOPWORDS.join("\n");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_size_has_no_filler() {
        let v = Vocab::for_size(256);
        assert_eq!(v.len(), 256);
        assert!(base_table().len() <= 256, "base table {}", base_table().len());
    }

    #[test]
    fn bijective() {
        let v = Vocab::for_size(300);
        for (i, s) in v.strings().iter().enumerate() {
            assert_eq!(v.id(s), Some(i as TokenId));
        }
    }

    #[test]
    fn flags_follow_string_class() {
        let v = Vocab::for_size(256);
        let the = v.id("the").unwrap();
        assert!(v.flags(the).unwrap().is_stopword);
        let year = v.id("1984").unwrap();
        assert!(v.flags(year).unwrap().is_numeric);
        let dot = v.id(".").unwrap();
        assert!(v.flags(dot).unwrap().is_punctuation);
        let p = v.id("photosynthesis").unwrap();
        let f = v.flags(p).unwrap();
        assert!(!f.is_stopword && !f.is_numeric && !f.is_punctuation);
    }

    #[test]
    fn encode_spells_unknown_words() {
        let v = Vocab::for_size(256);
        let ids = v.encode("The zebra.");
        assert_eq!(v.token_str(ids[0]), Some("the"));
        assert_eq!(ids.len(), 1 + 5 + 1);
        assert_eq!(v.decode(&[v.id("solar").unwrap(), v.id("panel").unwrap(), v.id(".").unwrap()]), "solar panel.");
    }

    #[test]
    fn micro_vocab_is_synthetic() {
        let v = Vocab::for_size(4);
        assert_eq!(v.strings(), &["t0", "t1", "t2", "t3"]);
    }
}
