use std::sync::Arc;

use super::{Backend, BackendError, ChatMessage, FinishReason, GenRequest, GenResponse, Introspectable, Role, TokenInfo};
use crate::engine::Generation;
use crate::model::{vocab, TokenId, Vocab};
use crate::Model;

/// In-process backend over the toy transformer. Each call owns its decode
/// state, so concurrent calls never share a cache.
#[derive(Clone)]
pub struct ToyBackend {
    model: Arc<Model>,
    vocab: Arc<Vocab>,
}

impl ToyBackend {
    pub fn new(model: Arc<Model>) -> Self {
        let vocab = Arc::new(Vocab::for_size(model.config.vocab_size));
        Self { model, vocab }
    }

    pub fn model_arc(&self) -> Arc<Model> {
        Arc::clone(&self.model)
    }
}

fn role_word(r: Role) -> &'static str {
    match r {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// `<bos> role : content ... assistant :`
pub fn render_chat(messages: &[ChatMessage]) -> String {
    let mut s = String::from(vocab::BOS);
    for m in messages {
        s.push(' ');
        s.push_str(role_word(m.role));
        s.push_str(" : ");
        s.push_str(&m.content);
    }
    s.push_str(" assistant :");
    s
}

impl Introspectable for ToyBackend {
    fn model(&self) -> &Model {
        &self.model
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn encode_messages(&self, messages: &[ChatMessage]) -> Vec<TokenId> {
        self.vocab.encode(&render_chat(messages))
    }
}

impl Backend for ToyBackend {
    fn name(&self) -> &str {
        "toy"
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        req.validate()?;
        let max_seq = self.model.config.max_seq;
        if req.max_tokens >= max_seq {
            return Err(BackendError::InvalidRequest(format!("max_tokens must be < max_seq {max_seq}")));
        }
        let mut prompt = self.encode_messages(&req.messages);
        // Keep the most recent context when the prompt would not fit.
        let room = max_seq - req.max_tokens;
        if prompt.len() > room {
            prompt.drain(..prompt.len() - room);
        }
        let eos = self.vocab.eos();
        let err = |e: crate::engine::EngineError| BackendError::Other(e.to_string());
        let mut g = Generation::new(&self.model, prompt, req.seed).map_err(err)?;
        let mut infos = Vec::new();
        let mut traces = Vec::new();
        let mut finish = FinishReason::Length;
        for _ in 0..req.max_tokens {
            g.advance().map_err(err)?;
            let c = g.choose(&req.sampler, &req.repetition).map_err(err)?;
            if req.want_introspection {
                infos.push(TokenInfo { chosen: c.token, p_chosen: c.p_model, p1: c.p1, p2: c.p2, logits: g.logits().to_vec() });
                traces.push(g.trace());
            }
            g.push(c.token);
            if req.stop_at_eos && Some(c.token) == eos {
                finish = FinishReason::Stop;
                break;
            }
        }
        let text = self.vocab.decode(g.generated());
        Ok(GenResponse {
            text,
            tokens: req.want_introspection.then_some(infos),
            traces: req.want_introspection.then_some(traces),
            finish,
            attempts: 1,
        })
    }

    fn introspection(&self) -> Option<&dyn Introspectable> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::sampling::SamplerParams;

    fn backend() -> ToyBackend {
        ToyBackend::new(Arc::new(Model::build(ModelConfig::default()).unwrap()))
    }

    #[test]
    fn deterministic_per_seed() {
        let b = backend();
        let req = GenRequest::new(vec![ChatMessage::user("what is the capital of france ?")], SamplerParams::default(), 12, 9);
        assert_eq!(b.generate(&req).unwrap().text, b.generate(&req).unwrap().text);
    }

    #[test]
    fn one_token_budget() {
        let b = backend();
        let mut req = GenRequest::new(vec![ChatMessage::user("solar panel")], SamplerParams::default(), 1, 1);
        req.want_introspection = true;
        let r = b.generate(&req).unwrap();
        assert_eq!(r.tokens.unwrap().len(), 1);
        assert_eq!(r.traces.unwrap().len(), 1);
    }
}
