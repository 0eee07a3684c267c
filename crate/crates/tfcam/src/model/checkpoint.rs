//! Versioned binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   10 bytes  b"TFCAMCKPT1"
//! u32     length of config JSON, then that many bytes (UTF-8)
//! u32     length of preprocessor JSON (0 if absent), then bytes
//! u32     parameter count
//! per parameter, in creation order:
//!   u32     name length, then name bytes (UTF-8)
//!   u32     rank, then rank × u64 dims
//!   dims-product × f64  row-major values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::data::{write_atomic, Preprocessor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 10] = b"TFCAMCKPT1";

pub fn save_checkpoint(model: &Model, pre: Option<&Preprocessor>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.write_all(MAGIC)?;
    let config = serde_json::to_vec(&model.config)
        .map_err(|e| Error::Checkpoint(format!("config encode: {e}")))?;
    buf.write_all(&(config.len() as u32).to_le_bytes())?;
    buf.write_all(&config)?;
    let pre_bytes = match pre {
        Some(p) => {
            serde_json::to_vec(p).map_err(|e| Error::Checkpoint(format!("preprocessor: {e}")))?
        }
        None => Vec::new(),
    };
    buf.write_all(&(pre_bytes.len() as u32).to_le_bytes())?;
    buf.write_all(&pre_bytes)?;
    buf.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for p in model.params.iter() {
        buf.write_all(&(p.name.len() as u32).to_le_bytes())?;
        buf.write_all(p.name.as_bytes())?;
        buf.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            buf.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            buf.write_all(&v.to_le_bytes())?;
        }
    }
    write_atomic(path, &buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Loads a checkpoint: rebuilds the architecture from the stored
/// config, then overwrites every parameter, verifying names and shapes.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<Preprocessor>)> {
    let bytes = std::fs::read(path)?;
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 10];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let clen = read_u32(&mut r)? as usize;
    let mut cbytes = vec![0u8; clen];
    r.read_exact(&mut cbytes)?;
    let config: ModelConfig = serde_json::from_slice(&cbytes)
        .map_err(|e| Error::Checkpoint(format!("config decode: {e}")))?;

    let plen = read_u32(&mut r)? as usize;
    let pre = if plen > 0 {
        let mut pbytes = vec![0u8; plen];
        r.read_exact(&mut pbytes)?;
        Some(
            serde_json::from_slice(&pbytes)
                .map_err(|e| Error::Checkpoint(format!("preprocessor decode: {e}")))?,
        )
    } else {
        None
    };

    let mut model = Model::new(config)?;
    let count = read_u32(&mut r)? as usize;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} parameters, architecture expects {}",
            model.params.len()
        )));
    }
    for pi in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        let mut nbytes = vec![0u8; nlen];
        r.read_exact(&mut nbytes)?;
        let name = String::from_utf8(nbytes)
            .map_err(|_| Error::Checkpoint("non-UTF-8 parameter name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let param = model.params.get_mut(crate::params::ParamId(pi));
        if param.name != name || param.value.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {pi}: stored {name} {shape:?}, expected {} {:?}",
                param.name,
                param.value.shape()
            )));
        }
        let n: usize = shape.iter().product();
        let dst = param.value.data_mut();
        for v in dst.iter_mut().take(n) {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
    }
    Ok((model, pre))
}
