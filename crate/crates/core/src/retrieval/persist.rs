//! Single-file binary index: magic, version, documents, postings. All
//! integers little-endian; strings are length-prefixed UTF-8.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::bm25::Index;
use super::corpus::Document;
use super::RetrievalError;

pub const INDEX_MAGIC: &[u8; 4] = b"RSIX";
pub const INDEX_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_index(index: &Index) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    put_u32(&mut out, INDEX_VERSION);
    put_u32(&mut out, index.docs.len() as u32);
    for (d, &len) in index.docs.iter().zip(&index.doc_len) {
        put_str(&mut out, &d.id);
        put_str(&mut out, &d.title);
        put_str(&mut out, &d.text);
        put_u32(&mut out, len);
    }
    put_u32(&mut out, index.postings.len() as u32);
    for (term, list) in &index.postings {
        put_str(&mut out, term);
        put_u32(&mut out, list.len() as u32);
        for &(d, tf) in list {
            put_u32(&mut out, d);
            put_u32(&mut out, tf);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], RetrievalError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| RetrievalError::BadIndex(format!("truncated at byte {}", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, RetrievalError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String, RetrievalError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| RetrievalError::BadIndex(e.to_string()))
    }
}

pub fn decode_index(buf: &[u8]) -> Result<Index, RetrievalError> {
    let mut r = Reader { buf, at: 0 };
    if r.take(4)? != INDEX_MAGIC {
        return Err(RetrievalError::BadIndex("wrong magic".into()));
    }
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(RetrievalError::BadIndex(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let mut docs = Vec::with_capacity(n);
    let mut doc_len = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.string()?;
        let title = r.string()?;
        let text = r.string()?;
        docs.push(Document { id, title, text });
        doc_len.push(r.u32()?);
    }
    let terms = r.u32()? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..terms {
        let t = r.string()?;
        let k = r.u32()? as usize;
        let mut list = Vec::with_capacity(k);
        for _ in 0..k {
            let d = r.u32()?;
            if d as usize >= n {
                return Err(RetrievalError::BadIndex(format!("posting for missing doc {d}")));
            }
            list.push((d, r.u32()?));
        }
        postings.insert(t, list);
    }
    if r.at != buf.len() {
        return Err(RetrievalError::BadIndex("trailing bytes".into()));
    }
    Ok(Index { docs, postings, doc_len })
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_index(index: &Index, path: &Path) -> Result<(), RetrievalError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&encode_index(index))?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<Index, RetrievalError> {
    decode_index(&std::fs::read(path)?)
}
