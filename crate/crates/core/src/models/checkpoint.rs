//! Model checkpoint container.
//!
//! Little-endian throughout:
//!
//! ```text
//! "TAGM"                        magic
//! u32   version (= 1)
//! u8    arch (0 = gcn, 1 = graph_transformer, 2 = mlp)
//! u32   layers, u32 hidden, u32 heads
//! f64   dropout
//! u64   in_dim, u64 num_classes
//! u32   parameter count
//! per parameter, in model order:
//!   u32 name length, name bytes (UTF-8)
//!   u64 rows, u64 cols, rows*cols f64 values (row-major)
//! ```

use std::fs;
use std::path::Path;

use super::{Arch, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TAGM";
const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match spec.arch {
        Arch::Gcn => 0,
        Arch::GraphTransformer => 1,
        Arch::Mlp => 2,
    });
    buf.extend_from_slice(&(spec.layers as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.hidden as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.heads as u32).to_le_bytes());
    buf.extend_from_slice(&spec.dropout.to_le_bytes());
    buf.extend_from_slice(&(spec.in_dim as u64).to_le_bytes());
    buf.extend_from_slice(&(spec.num_classes as u64).to_le_bytes());
    let params = model.parameters();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a TAGM checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let arch = match r.u8()? {
        0 => Arch::Gcn,
        1 => Arch::GraphTransformer,
        2 => Arch::Mlp,
        other => return Err(Error::Format(format!("unknown architecture tag {other}"))),
    };
    let spec = ModelSpec {
        arch,
        layers: r.u32()? as usize,
        hidden: r.u32()? as usize,
        heads: r.u32()? as usize,
        dropout: r.f64()?,
        in_dim: r.u64()? as usize,
        num_classes: r.u64()? as usize,
    };
    let mut model = Model::init(spec, 0).map_err(|e| Error::Format(format!("checkpoint spec: {e}")))?;
    let count = r.u32()? as usize;
    let mut params = model.parameters_mut();
    if count != params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} parameters, spec implies {}",
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        if name != p.name {
            return Err(Error::Format(format!("expected parameter {}, found {name}", p.name)));
        }
        let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
        if (rows, cols) != p.shape() {
            return Err(Error::Format(format!(
                "parameter {name} is {rows}x{cols}, expected {:?}",
                p.shape()
            )));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(r.f64()?);
        }
        p.value = Tensor::from_vec(rows, cols, values)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
