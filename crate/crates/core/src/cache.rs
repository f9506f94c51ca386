//! On-disk cache of embedding matrices.
//!
//! File layout: `n: u64`, `d: u64`, then `n·d` `f64` values in row-major
//! order, all little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::embed::{EmbedConfig, EmbeddingMatrix, NetmfMode};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;

pub fn write_embedding<W: Write>(mut w: W, y: &EmbeddingMatrix) -> std::io::Result<()> {
    let m = y.values();
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_embedding<R: Read>(mut r: R) -> Result<EmbeddingMatrix> {
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut word)
            .map_err(|e| Error::io("<embedding cache>", e))?;
        Ok(word)
    };
    let n = u64::from_le_bytes(next(&mut r)?) as usize;
    let d = u64::from_le_bytes(next(&mut r)?) as usize;
    let mut m = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            m[(i, j)] = f64::from_le_bytes(next(&mut r)?);
        }
    }
    EmbeddingMatrix::new(m)
}

/// Cache key over the graph content, config and mode.
pub fn cache_key(g: &SparseGraph, cfg: &EmbedConfig, mode: NetmfMode) -> String {
    let mut h = Sha256::new();
    h.update(g.content_hash().as_bytes());
    h.update(
        serde_json::to_string(cfg)
            .expect("config serializes")
            .as_bytes(),
    );
    h.update(format!("{mode:?}").as_bytes());
    h.finalize()
        .iter()
        .take(16)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Directory-backed embedding cache.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(EmbeddingCache { dir })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.emb"))
    }

    pub fn get(&self, key: &str) -> Option<EmbeddingMatrix> {
        let path = self.path(key);
        let file = fs::File::open(&path).ok()?;
        match read_embedding(std::io::BufReader::new(file)) {
            Ok(y) => Some(y),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn put(&self, key: &str, y: &EmbeddingMatrix) -> Result<()> {
        let path = self.path(key);
        let tmp = path.with_extension("tmp");
        let write = |p: &Path| -> std::io::Result<()> {
            let mut w = std::io::BufWriter::new(fs::File::create(p)?);
            write_embedding(&mut w, y)?;
            w.flush()
        };
        write(&tmp).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_header_then_row_major() {
        let y = EmbeddingMatrix::new(DMatrix::from_row_slice(
            2,
            3,
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        ))
        .unwrap();
        let mut buf = Vec::new();
        write_embedding(&mut buf, &y).unwrap();
        assert_eq!(buf.len(), 16 + 6 * 8);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        assert_eq!(&buf[8..16], &3u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&buf[24..32], &2.0f64.to_le_bytes());
        assert_eq!(read_embedding(buf.as_slice()).unwrap(), y);
        assert!(read_embedding(&buf[..20]).is_err());
    }

    #[test]
    fn directory_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path()).unwrap();
        let y = EmbeddingMatrix::new(DMatrix::from_element(3, 2, 0.25)).unwrap();
        assert!(cache.get("k").is_none());
        cache.put("k", &y).unwrap();
        assert_eq!(cache.get("k").unwrap(), y);
    }
}
