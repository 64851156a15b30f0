use serde::Serialize;

use super::AtlasError;
use crate::backend::{Backend, ChatMessage, GenRequest};
use crate::sampling::SamplerParams;

pub const QUERY_PROMPT: &str = "Formulate a search query from these tokens: ";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalQuery {
    pub positions: Vec<usize>,
    pub tokens: Vec<String>,
    pub prompt: String,
    pub query: String,
    /// The backend was unavailable and the raw tokens were used instead.
    pub fallback: bool,
}

pub fn render_query_prompt(tokens: &[String]) -> String {
    format!("{QUERY_PROMPT}{}", tokens.join(" "))
}

/// Renders the prompt and asks `backend` for a query; without a backend, or
/// when it fails or answers with nothing, the joined tokens are the query.
pub fn formulate_query(
    positions: Vec<usize>,
    tokens: Vec<String>,
    backend: Option<&dyn Backend>,
    seed: u64,
) -> Result<RetrievalQuery, AtlasError> {
    if tokens.is_empty() {
        return Err(AtlasError::EmptySelection);
    }
    let prompt = render_query_prompt(&tokens);
    let raw = tokens.join(" ");
    let (query, fallback) = match backend {
        None => (raw, false),
        Some(b) => {
            let sampler = SamplerParams { temperature: 0.3, top_p: 0.9, top_k: 40, min_p: 0.0 };
            let req = GenRequest::new(vec![ChatMessage::user(prompt.clone())], sampler, 16, seed);
            match b.generate(&req) {
                Ok(r) if !r.text.trim().is_empty() => (r.text.trim().to_string(), false),
                _ => (raw, true),
            }
        }
    };
    Ok(RetrievalQuery { positions, tokens, prompt, query, fallback })
}
