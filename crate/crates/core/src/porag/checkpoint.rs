//! Adapter and reward heads as a flat little-endian f64 file plus a JSON
//! sidecar naming each tensor's shape and offset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adapter::AdapterParams;
use super::heads::RewardHeadParams;
use super::train::Trainer;
use super::PoragError;

pub const CHECKPOINT_BIN: &str = "checkpoint.bin";
pub const CHECKPOINT_JSON: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in values, not bytes.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub step: usize,
    pub seed: u64,
    pub base_checksum: String,
    pub rank: usize,
    pub model_dim: usize,
    pub vocab_size: usize,
    pub tensors: Vec<TensorEntry>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)
}

pub fn save_checkpoint(t: &Trainer, dir: &Path) -> Result<Checkpoint, PoragError> {
    std::fs::create_dir_all(dir)?;
    let (r, d, v) = (t.adapter.rank, t.adapter.d, t.adapter.vocab);
    let parts: Vec<(&str, Vec<usize>, Vec<f64>)> = vec![
        ("adapter.A", vec![r, d], t.adapter.a.clone()),
        ("adapter.B", vec![v, r], t.adapter.b.clone()),
        ("fidelity_head", vec![d * d + 2 * d + 1], t.fidelity_head.flat()),
        ("quality_head", vec![d * d + 2 * d + 1], t.quality_head.flat()),
    ];
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, shape, vals) in parts {
        tensors.push(TensorEntry { name: name.into(), shape, offset });
        offset += vals.len();
        for x in vals {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let meta = Checkpoint {
        format_version: 1,
        step: t.step,
        seed: t.seed,
        base_checksum: t.base_checksum.clone(),
        rank: r,
        model_dim: d,
        vocab_size: v,
        tensors,
    };
    write_atomic(&dir.join(CHECKPOINT_BIN), &bytes)?;
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| PoragError::Checkpoint(e.to_string()))?;
    write_atomic(&dir.join(CHECKPOINT_JSON), &json)?;
    Ok(meta)
}

/// Restores adapter, heads and step count into `t` after checking that the
/// checkpoint was made against the same frozen base and shapes.
pub fn load_checkpoint(t: &mut Trainer, dir: &Path) -> Result<Checkpoint, PoragError> {
    let meta: Checkpoint = serde_json::from_slice(&std::fs::read(dir.join(CHECKPOINT_JSON))?)
        .map_err(|e| PoragError::Checkpoint(e.to_string()))?;
    if meta.format_version != 1 {
        return Err(PoragError::Checkpoint(format!("unsupported format {}", meta.format_version)));
    }
    if meta.base_checksum != t.base_checksum {
        return Err(PoragError::Checkpoint("base model checksum differs".into()));
    }
    if (meta.rank, meta.model_dim, meta.vocab_size) != (t.adapter.rank, t.adapter.d, t.adapter.vocab) {
        return Err(PoragError::Checkpoint("adapter shape differs from config".into()));
    }
    let bytes = std::fs::read(dir.join(CHECKPOINT_BIN))?;
    if bytes.len() % 8 != 0 {
        return Err(PoragError::Checkpoint("binary length not a multiple of 8".into()));
    }
    let vals: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let get = |name: &str| -> Result<&[f64], PoragError> {
        let e = meta
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| PoragError::Checkpoint(format!("missing tensor {name}")))?;
        let n: usize = e.shape.iter().product();
        vals.get(e.offset..e.offset + n).ok_or_else(|| PoragError::Checkpoint(format!("tensor {name} out of range")))
    };
    let d = meta.model_dim;
    let adapter = AdapterParams {
        rank: meta.rank,
        d,
        vocab: meta.vocab_size,
        a: get("adapter.A")?.to_vec(),
        b: get("adapter.B")?.to_vec(),
    };
    if adapter.a.len() != meta.rank * d || adapter.b.len() != meta.vocab_size * meta.rank {
        return Err(PoragError::Checkpoint("adapter tensor sizes".into()));
    }
    t.fidelity_head = RewardHeadParams::from_flat(d, get("fidelity_head")?)?;
    t.quality_head = RewardHeadParams::from_flat(d, get("quality_head")?)?;
    t.adapter = adapter;
    t.step = meta.step;
    Ok(meta)
}
