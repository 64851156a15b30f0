//! Toy decoder and its introspection types.

mod cache;
mod config;
pub mod rng;
mod trace;
mod transformer;
pub mod vocab;

pub use cache::{KvCache, LayerCache};
pub use config::ModelConfig;
pub use trace::{row_entropy, AttnRow, LayerAttention, StepTrace};
pub use transformer::{matvec, rms_norm, softmax_in_place, Layer, Model};
pub use vocab::{TokenId, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("cache mismatch: {0}")]
    CacheMismatch(String),
    #[error("token id {0} outside the vocabulary")]
    UnknownToken(TokenId),
    #[error("empty input")]
    EmptyInput,
}
