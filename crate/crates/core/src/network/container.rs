//! Versioned tensor container used for checkpoints and `r_f` dumps.
//!
//! Layout (little-endian): magic `EFDR`, `u32` version, `u32` record count,
//! `key=value` records (`u32` length + UTF-8), `u32` tensor count, tensors
//! (`u32` name length, name, `u32` rank, `u64` dims, `f32` values), and a
//! trailing CRC-32 of every preceding byte.

use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EFDR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported container version: {0}")]
    VersionMismatch(String),
    #[error("checksum mismatch")]
    ChecksumFailure,
    #[error("truncated container")]
    TruncatedCheckpoint,
    #[error("malformed container: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::TruncatedCheckpoint)?;
        if end > self.buf.len() {
            return Err(CheckpointError::TruncatedCheckpoint);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Format("invalid UTF-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl TensorFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, &format!("{k}={v}"));
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(CheckpointError::VersionMismatch("not an EFDR container (bad magic)".into()));
        }
        let version = c.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch(format!("version {version}, expected {FORMAT_VERSION}")));
        }
        let n_meta = c.u32()?;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            let rec = c.string()?;
            let (k, v) = rec.split_once('=').ok_or_else(|| CheckpointError::Format(format!("record {rec:?}")))?;
            meta.push((k.to_string(), v.to_string()));
        }
        let n_tensors = c.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = c.string()?;
            let rank = c.u32()? as usize;
            if rank > 8 {
                return Err(CheckpointError::Format(format!("tensor {name}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(c.u64()? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| CheckpointError::Format(format!("tensor {name}: size overflow")))?;
            let bytes = c.take(n.checked_mul(4).ok_or(CheckpointError::TruncatedCheckpoint)?)?;
            let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
            tensors.push((name, t));
        }
        let body = c.pos;
        let stored = c.u32()?;
        if c.pos != buf.len() || crc32fast::hash(&buf[..body]) != stored {
            return Err(CheckpointError::ChecksumFailure);
        }
        Ok(Self { meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
