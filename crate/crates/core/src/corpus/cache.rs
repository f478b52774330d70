//! Binary embedding cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "ARECCACH"
//! version     u32      1
//! dim         u32
//! agents      u32
//! per agent:
//!   id        u16 length + UTF-8
//!   rows      u64
//!   per row:  u16 length + UTF-8 prompt id
//!   payload   rows × dim × f32
//! crc32       u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{AgentCorpus, Corpora};
use crate::embedding::UNIT_NORM_TOLERANCE;
use crate::error::{CacheError, Error, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"ARECCACH";
pub const CACHE_VERSION: u32 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::InvalidInput(format!("identifier longer than 65535 bytes: {s:.32}…")))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serializes corpora into the cache byte layout.
pub fn encode_cache(corpora: &Corpora) -> Result<Vec<u8>> {
    let Some(dim) = corpora.values().next().map(AgentCorpus::dim) else {
        return Err(Error::InvalidInput("no corpora to cache".into()));
    };
    if let Some(c) = corpora.values().find(|c| c.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: c.dim(),
        });
    }
    let payload: usize = corpora.values().map(|c| c.payload().len() * 4).sum();
    let mut buf = Vec::with_capacity(payload + 64 + corpora.values().map(|c| c.len() * 16).sum::<usize>());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(corpora.len() as u32).to_le_bytes());
    for (agent, corpus) in corpora {
        put_str(&mut buf, agent)?;
        buf.extend_from_slice(&(corpus.len() as u64).to_le_bytes());
        for id in corpus.prompt_ids() {
            put_str(&mut buf, id)?;
        }
        for v in corpus.payload() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

/// Writes the cache atomically (temp file + rename) and returns its size.
pub fn save_corpus_cache(corpora: &Corpora, path: &Path) -> Result<u64> {
    let bytes = encode_cache(corpora)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

pub fn load_corpus_cache(path: &Path) -> Result<Corpora> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes).map_err(|source| Error::Cache {
        path: path.to_owned(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CacheError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CacheError::Truncated {
                expected: self.pos as u64 + n as u64,
                actual: self.bytes.len() as u64,
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, CacheError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CacheError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CacheError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CacheError> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CacheError::Malformed(format!("invalid UTF-8 at byte {}", self.pos - len)))
    }
}

/// Parses and validates cache bytes.
pub fn decode_cache(bytes: &[u8]) -> Result<Corpora, CacheError> {
    let prefix = &bytes[..bytes.len().min(CACHE_MAGIC.len())];
    if prefix != &CACHE_MAGIC[..prefix.len()] {
        return Err(CacheError::BadMagic {
            found: prefix.to_vec(),
        });
    }
    let mut r = Reader { bytes, pos: 0 };
    r.take(CACHE_MAGIC.len())?;
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(CacheError::UnsupportedVersion(version));
    }
    let dim = r.u32()? as usize;
    let agents = r.u32()?;
    if dim == 0 {
        return Err(CacheError::Malformed("dim is zero".into()));
    }

    let mut corpora = Corpora::new();
    for _ in 0..agents {
        let agent = r.string()?;
        let rows = r.u64()?;
        if rows == 0 {
            return Err(CacheError::Malformed(format!("agent {agent:?} has no rows")));
        }
        // a row needs at least 2 id-length bytes; reject absurd counts before allocating
        let remaining = (bytes.len() - r.pos) as u64;
        if rows.saturating_mul(2) > remaining {
            return Err(CacheError::Truncated {
                expected: r.pos as u64 + rows.saturating_mul(2 + 4 * dim as u64),
                actual: bytes.len() as u64,
            });
        }
        let rows = rows as usize;
        let ids = (0..rows).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        let raw = r.take(rows.checked_mul(dim * 4).ok_or_else(|| CacheError::Malformed("row count overflows".into()))?)?;
        let payload: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        for (i, row) in payload.chunks_exact(dim).enumerate() {
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(CacheError::NormViolation {
                    agent: agent.clone(),
                    row: i,
                    norm,
                });
            }
        }
        let corpus = AgentCorpus::new(agent.clone(), dim, payload, ids)
            .map_err(|e| CacheError::Malformed(e.to_string()))?;
        if corpora.insert(agent.clone(), corpus).is_some() {
            return Err(CacheError::Malformed(format!("duplicate agent {agent:?}")));
        }
    }

    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(CacheError::Malformed(format!(
            "{} trailing bytes after checksum",
            bytes.len() - r.pos
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CacheError::Checksum { stored, computed });
    }
    Ok(corpora)
}
