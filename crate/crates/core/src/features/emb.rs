//! EMB1 container for precomputed embedding matrices.
//!
//! ```text
//! "EMB1" | u64 n | u64 d | n*d f32   (little-endian, row-major)
//! ```
//!
//! Values are stored as f32. Loading widens them to f64 exactly, so a
//! matrix that already holds f32-representable values round-trips bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMatrix, Tensor};

const MAGIC: &[u8; 4] = b"EMB1";
const HEADER: usize = 20;

pub fn encode_emb1(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(HEADER + 4 * m.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for (k, &v) in m.data().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Format(format!(
                "value {v} at ({}, {}) is not representable as a finite f32",
                k / m.cols(),
                k % m.cols()
            )));
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_emb1(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER {
        return Err(Error::Format(format!("EMB1 header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected EMB1".into()));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::Format(format!("EMB1 dimensions {n}x{d} overflow")))?;
    let payload = &bytes[HEADER..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "EMB1 payload is {} bytes, {n}x{d} needs {expected}",
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(expected / 4);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite value at index {}", data.len())));
        }
        data.push(v as f64);
    }
    Tensor::from_vec(n as usize, d as usize, data)
}

/// Writes `bytes` next to `path` and renames into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(
        ".{file_name}.{}.{:?}.tmp",
        std::process::id(),
        std::thread::current().id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn save_embedding_file(path: &Path, m: &FeatureMatrix) -> Result<()> {
    write_atomic(path, &encode_emb1(m)?)
}

pub fn load_embedding_file(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_emb1(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
