use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{encode_all, TextEncoder};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TCDSREMB";

/// Identity of everything that can change an encoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub encoder: String,
    pub version: String,
    pub vocab_hash: String,
    pub dim: usize,
}

/// Append-only store of prompt encodings. Layout: magic, `u32` header
/// length, header JSON, then records of 32-byte key, `u32` dimension and
/// that many little-endian `f64`. A header mismatch or unreadable file
/// starts a fresh cache; a torn final record is dropped.
pub struct EmbeddingCache {
    path: PathBuf,
    header: CacheHeader,
    entries: HashMap<[u8; 32], Vec<f64>>,
    writer: Option<BufWriter<File>>,
}

fn key_of(header: &CacheHeader, text: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(header.encoder.as_bytes());
    h.update([0]);
    h.update(header.version.as_bytes());
    h.update([0]);
    h.update(header.vocab_hash.as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    h.finalize().into()
}

fn parse(bytes: &[u8], header: &CacheHeader) -> Option<(HashMap<[u8; 32], Vec<f64>>, usize)> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return None;
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().ok()?) as usize;
    let stored: CacheHeader = serde_json::from_slice(bytes.get(12..12 + hlen)?).ok()?;
    if &stored != header {
        return None;
    }
    let mut pos = 12 + hlen;
    let mut entries = HashMap::new();
    while pos + 36 <= bytes.len() {
        let key: [u8; 32] = bytes[pos..pos + 32].try_into().ok()?;
        let dim = u32::from_le_bytes(bytes[pos + 32..pos + 36].try_into().ok()?) as usize;
        let end = pos + 36 + dim * 8;
        if dim != header.dim || end > bytes.len() {
            break;
        }
        let v: Vec<f64> = bytes[pos + 36..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.insert(key, v);
        pos = end;
    }
    Some((entries, pos))
}

impl EmbeddingCache {
    pub fn open(path: &Path, header: CacheHeader) -> Result<Self> {
        let mut bytes = Vec::new();
        if path.exists() {
            File::open(path)?.read_to_end(&mut bytes)?;
        }
        let parsed = if bytes.is_empty() { None } else { parse(&bytes, &header) };
        let (entries, valid_len) = match parsed {
            Some(p) => p,
            None => {
                if !bytes.is_empty() {
                    log::warn!("embedding cache {} is stale or unreadable; rebuilding", path.display());
                }
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                let mut f = File::create(path)?;
                let h = serde_json::to_vec(&header)?;
                f.write_all(MAGIC)?;
                f.write_all(&(h.len() as u32).to_le_bytes())?;
                f.write_all(&h)?;
                (HashMap::new(), 12 + h.len())
            }
        };
        let file = OpenOptions::new().write(true).open(path)?;
        if valid_len < file.metadata()?.len() as usize {
            log::warn!("dropping a torn record at the end of {}", path.display());
        }
        file.set_len(valid_len as u64)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), header, entries, writer: Some(BufWriter::new(file)) })
    }

    pub fn header(&self) -> &CacheHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&[f64]> {
        self.entries.get(&key_of(&self.header, text)).map(Vec::as_slice)
    }

    /// Write-once: an existing entry is kept.
    pub fn insert(&mut self, text: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.header.dim {
            return Err(Error::Encoder(format!(
                "cache expects {} dims, got {}",
                self.header.dim,
                vector.len()
            )));
        }
        let key = key_of(&self.header, text);
        if self.entries.contains_key(&key) {
            return Ok(());
        }
        let w = self.writer.as_mut().expect("cache writer");
        w.write_all(&key)?;
        w.write_all(&(vector.len() as u32).to_le_bytes())?;
        for x in &vector {
            w.write_all(&x.to_le_bytes())?;
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            w.flush()?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for EmbeddingCache {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Encodings for `texts`, computing only the ones missing from the cache.
pub fn encode_cached(
    cache: &mut EmbeddingCache,
    encoder: &dyn TextEncoder,
    texts: &[String],
    concurrency: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut missing: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for t in texts {
        if cache.get(t).is_none() && seen.insert(t.as_str()) {
            missing.push(t.clone());
        }
    }
    if !missing.is_empty() {
        log::info!("encoding {} prompts with {}", missing.len(), encoder.name());
        let vectors = encode_all(encoder, &missing, concurrency)?;
        for (t, v) in missing.iter().zip(vectors) {
            cache.insert(t, v)?;
        }
        cache.flush()?;
    }
    Ok(texts.iter().map(|t| cache.get(t).expect("cached").to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::backend::StubEncoder;

    fn header(dim: usize) -> CacheHeader {
        CacheHeader { encoder: "stub".into(), version: "1".into(), vocab_hash: "v".into(), dim }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let enc = StubEncoder::new(8, 1);
        let texts: Vec<String> = ["a b", "c d", "a b"].iter().map(|s| s.to_string()).collect();
        let first = {
            let mut c = EmbeddingCache::open(&path, header(8)).unwrap();
            encode_cached(&mut c, &enc, &texts, 2).unwrap()
        };
        let c = EmbeddingCache::open(&path, header(8)).unwrap();
        assert_eq!(c.len(), 2);
        for (t, v) in texts.iter().zip(&first) {
            let got = c.get(t).unwrap();
            assert!(got.iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn header_change_invalidates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        {
            let mut c = EmbeddingCache::open(&path, header(2)).unwrap();
            c.insert("x", vec![1.0, 2.0]).unwrap();
        }
        let mut other = header(2);
        other.vocab_hash = "changed".into();
        assert!(EmbeddingCache::open(&path, other).unwrap().is_empty());
    }

    #[test]
    fn corruption_is_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        {
            let mut c = EmbeddingCache::open(&path, header(2)).unwrap();
            c.insert("x", vec![1.0, 2.0]).unwrap();
            c.insert("y", vec![3.0, 4.0]).unwrap();
        }
        let len = std::fs::metadata(&path).unwrap().len();
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(len - 5).unwrap();
        let mut c = EmbeddingCache::open(&path, header(2)).unwrap();
        assert_eq!(c.get("x"), Some(&[1.0, 2.0][..]));
        assert!(c.get("y").is_none());
        c.insert("y", vec![3.0, 4.0]).unwrap();
        drop(c);
        assert_eq!(EmbeddingCache::open(&path, header(2)).unwrap().len(), 2);

        std::fs::write(&path, b"garbage").unwrap();
        assert!(EmbeddingCache::open(&path, header(2)).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = EmbeddingCache::open(&dir.path().join("e"), header(3)).unwrap();
        assert!(c.insert("x", vec![1.0]).is_err());
    }
}
