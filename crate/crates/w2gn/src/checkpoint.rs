//! Binary checkpoints: both networks plus the iteration counter, with a
//! magic tag and format version. Round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::icnn::{DenseIcnn, DenseIcnnSpec};

const MAGIC: &[u8; 8] = b"W2GNCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// A training snapshot: primary net, conjugate net, iteration count.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub theta: DenseIcnn,
    pub omega: DenseIcnn,
    pub iteration: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn err(&self, message: &str) -> CheckpointError {
        CheckpointError::Format { path: self.path.to_owned(), message: message.into() }
    }
}

fn write_net(out: &mut Vec<u8>, net: &DenseIcnn) {
    let spec = net.spec();
    out.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec.rank as u32).to_le_bytes());
    out.extend_from_slice(&(spec.widths.len() as u32).to_le_bytes());
    for &w in &spec.widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&spec.beta.to_le_bytes());
    out.extend_from_slice(&spec.celu_alpha.to_le_bytes());
    out.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
    for &p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
}

fn read_net(r: &mut Reader) -> Result<DenseIcnn, CheckpointError> {
    let input_dim = r.u32()? as usize;
    let rank = r.u32()? as usize;
    let n_widths = r.u32()? as usize;
    if n_widths > 64 {
        return Err(r.err("implausible layer count"));
    }
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(r.u32()? as usize);
    }
    let beta = r.f64()?;
    let celu_alpha = r.f64()?;
    let spec = DenseIcnnSpec { input_dim, rank, widths, beta, celu_alpha };
    spec.validate().map_err(|e| r.err(&e.to_string()))?;
    let count = r.u64()? as usize;
    if count != spec.param_count() {
        return Err(r.err(&format!(
            "parameter count {count} does not match the spec ({})",
            spec.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(r.f64()?);
    }
    DenseIcnn::from_params(spec, params).map_err(|e| r.err(&e.to_string()))
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ckpt.iteration.to_le_bytes());
    write_net(&mut out, &ckpt.theta);
    write_net(&mut out, &ckpt.omega);
    let mut f = std::fs::File::create(path)
        .map_err(|source| CheckpointError::Io { path: path.to_owned(), source })?;
    f.write_all(&out).map_err(|source| CheckpointError::Io { path: path.to_owned(), source })
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| CheckpointError::Io { path: path.to_owned(), source })?;
    load_bytes(&buf, path)
}

/// Decode from an in-memory buffer; `path` only labels errors.
pub fn load_bytes(buf: &[u8], path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(r.err("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(&format!("unsupported format version {version}")));
    }
    let iteration = r.u64()?;
    let theta = read_net(&mut r)?;
    let omega = read_net(&mut r)?;
    if r.pos != buf.len() {
        return Err(r.err("trailing bytes after checkpoint payload"));
    }
    Ok(Checkpoint { theta, omega, iteration })
}
