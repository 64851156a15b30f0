use serde::{Deserialize, Serialize};

use super::ModelError;

/// Shape and seed of the toy decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub model_dim: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            head_dim: 16,
            model_dim: 64,
            vocab_size: 256,
            max_seq: 2048,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("model_dim", self.model_dim),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.max_seq < 2 {
            return Err(ModelError::InvalidConfig("max_seq must be >= 2".into()));
        }
        if self.model_dim != self.num_heads * self.head_dim {
            return Err(ModelError::InvalidConfig(format!(
                "model_dim {} != num_heads {} * head_dim {}",
                self.model_dim, self.num_heads, self.head_dim
            )));
        }
        Ok(())
    }

    /// Hidden width of the feed-forward block.
    pub fn ff_dim(&self) -> usize {
        2 * self.model_dim
    }
}
