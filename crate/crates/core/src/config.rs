//! Top-level run configuration: one JSON document with a section per module.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::atlas::AtlasConfig;
use crate::backend::RemoteConfig;
use crate::critic::CompressionConfig;
use crate::decoders::DecoderConfig;
use crate::model::ModelConfig;
use crate::porag::TrainConfig;
use crate::retrieval::RetrievalConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{section}: {msg}")]
    Invalid { section: &'static str, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub remote: RemoteConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Filled by `--print-config`; ignored when loading.
    #[serde(rename = "_provenance", skip_serializing_if = "Option::is_none")]
    pub provenance: Option<BTreeMap<String, String>>,
    pub seed: u64,
    pub model: ModelConfig,
    pub atlas: AtlasConfig,
    pub critic: CompressionConfig,
    pub porag: TrainConfig,
    pub decoder: DecoderConfig,
    pub retrieval: RetrievalConfig,
    pub backend: BackendSection,
}

/// Keys whose defaults are the published values.
const PAPER_KEYS: &[&str] = &[
    "atlas.alpha0",
    "atlas.lambda",
    "atlas.tau_p",
    "atlas.k_tokens",
    "atlas.beta",
    "atlas.tau_embed",
    "critic.ratio",
    "porag.grpo.eps_clip",
    "porag.grpo.alpha",
    "porag.grpo.beta",
    "porag.grpo.c1",
    "porag.grpo.sigma_min",
    "porag.grpo.omega1",
    "porag.grpo.omega2",
    "porag.grpo.c_value",
    "porag.grpo.c_norm",
    "porag.grpo.eta_policy",
    "porag.grpo.eta_reward",
    "porag.grpo.group_size",
];

fn leaves(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(&key, x, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut c: RunConfig = serde_json::from_str(text)?;
        c.provenance = None;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn inv(section: &'static str) -> impl Fn(String) -> ConfigError {
            move |msg| ConfigError::Invalid { section, msg }
        }
        self.model.validate().map_err(|e| inv("model")(e.to_string()))?;
        self.atlas.validate().map_err(|e| inv("atlas")(e.to_string()))?;
        self.critic.validate().map_err(|e| inv("critic")(e.to_string()))?;
        self.porag.validate().map_err(|e| inv("porag")(e.to_string()))?;
        self.decoder.validate().map_err(|e| inv("decoder")(e.to_string()))?;
        if self.retrieval.top_n == 0 || self.retrieval.context_budget == 0 {
            return Err(inv("retrieval")("top_n and context_budget must be >= 1".into()));
        }
        if self.decoder.max_tokens >= self.model.max_seq {
            return Err(inv("decoder")("max_tokens must be < model.max_seq".into()));
        }
        Ok(())
    }

    /// `paper-default`, `artifact-default` or `user` for every leaf key.
    pub fn provenance_tags(&self) -> BTreeMap<String, String> {
        let mut cur = BTreeMap::new();
        let mut def = BTreeMap::new();
        let strip = |c: &RunConfig| RunConfig { provenance: None, ..c.clone() };
        leaves("", &serde_json::to_value(strip(self)).expect("config serializes"), &mut cur);
        leaves("", &serde_json::to_value(RunConfig::default()).expect("config serializes"), &mut def);
        cur.into_iter()
            .map(|(k, v)| {
                let tag = if def.get(&k) != Some(&v) {
                    "user"
                } else if PAPER_KEYS.contains(&k.as_str()) {
                    "paper-default"
                } else {
                    "artifact-default"
                };
                (k, tag.to_string())
            })
            .collect()
    }

    /// Pretty JSON with provenance tags attached.
    pub fn resolved_json(&self) -> String {
        let mut c = self.clone();
        c.provenance = Some(self.provenance_tags());
        serde_json::to_string_pretty(&c).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_json(&c.resolved_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 9, "atlas": {"enabled": true}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert!(c.atlas.enabled);
        assert_eq!(c.atlas.tau_p, 0.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"atlas": {"tau": 1}}"#).is_err());
    }

    #[test]
    fn tags() {
        let mut c = RunConfig::default();
        c.seed = 4;
        let t = c.provenance_tags();
        assert_eq!(t["porag.grpo.eps_clip"], "paper-default");
        assert_eq!(t["critic.min_tokens"], "artifact-default");
        assert_eq!(t["seed"], "user");
    }
}
