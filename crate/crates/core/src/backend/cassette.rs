//! JSONL transcripts: record live calls, replay them later.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenRequest, GenResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request: GenRequest,
    pub response: String,
}

/// Wraps a backend and keeps every request/response pair in call order.
pub struct RecordingBackend<'a> {
    inner: &'a dyn Backend,
    entries: Mutex<Vec<CassetteEntry>>,
}

impl<'a> RecordingBackend<'a> {
    pub fn new(inner: &'a dyn Backend) -> Self {
        Self { inner, entries: Mutex::new(Vec::new()) }
    }

    pub fn entries(&self) -> Vec<CassetteEntry> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in self.entries() {
            serde_json::to_writer(&mut f, &e)?;
            f.write_all(b"\n")?;
        }
        f.flush()
    }
}

impl Backend for RecordingBackend<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        let r = self.inner.generate(req)?;
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(CassetteEntry { request: req.clone(), response: r.text.clone() });
        Ok(r)
    }
}

/// Replays recorded responses. Lookup is by exact request; repeated
/// identical requests are served in recorded order.
pub struct CassetteBackend {
    entries: Vec<CassetteEntry>,
    used: Mutex<Vec<bool>>,
}

impl CassetteBackend {
    pub fn new(entries: Vec<CassetteEntry>) -> Self {
        let used = Mutex::new(vec![false; entries.len()]);
        Self { entries, used }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let f = std::fs::File::open(path).map_err(|e| BackendError::Other(e.to_string()))?;
        let mut entries = Vec::new();
        for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Other(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: CassetteEntry = serde_json::from_str(&line)
                .map_err(|e| BackendError::Malformed(format!("line {}: {e}", i + 1)))?;
            entries.push(e);
        }
        Ok(Self::new(entries))
    }
}

impl Backend for CassetteBackend {
    fn name(&self) -> &str {
        "cassette"
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        for (i, e) in self.entries.iter().enumerate() {
            if !used[i] && e.request == *req {
                used[i] = true;
                return Ok(GenResponse::text(e.response.clone()));
            }
        }
        let preview: String = req.messages.last().map(|m| m.content.chars().take(60).collect()).unwrap_or_default();
        Err(BackendError::Replay(format!("no recorded response for request {preview:?}")))
    }
}
