//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "FUSCKPT\0"
//! version   u32
//! digest    u64      fnv-1a of the resolved model configuration JSON
//! n_tensors u32
//! per tensor:
//!   name_len u32, name utf-8,
//!   rank u32, extents u64 × rank,
//!   values f64 × numel (raw bits)
//! ```
//!
//! Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::VisitParams;
use crate::model::Model;

pub const MAGIC: &[u8; 8] = b"FUSCKPT\0";
pub const VERSION: u32 = 1;

pub fn save(path: &Path, model: &mut Model) -> Result<()> {
    let digest = model.config.digest();
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    model.visit_params("model", &mut |name, t| {
        tensors.push((name, t.shape().to_vec(), t.values().to_vec()));
    });

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&digest.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, values) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Load a checkpoint into a freshly built model. The configuration digest,
/// tensor names, and shapes must all match the model.
pub fn load_into(path: &Path, model: &mut Model) -> Result<()> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut file)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let digest = read_u64(&mut file)?;
    if digest != model.config.digest() {
        return Err(Error::Checkpoint(
            "configuration digest does not match the checkpoint".into(),
        ));
    }
    let n_tensors = read_u32(&mut file)? as usize;
    let mut loaded: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = read_u32(&mut file)? as usize;
        let mut name_buf = vec![0u8; name_len];
        file.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let rank = read_u32(&mut file)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut file)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            file.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        loaded.push((name, shape, values));
    }

    let mut idx = 0usize;
    let mut mismatch: Option<String> = None;
    model.visit_params("model", &mut |name, t| {
        if mismatch.is_some() {
            return;
        }
        let Some((stored_name, shape, values)) = loaded.get(idx) else {
            mismatch = Some(format!("checkpoint ends before `{name}`"));
            return;
        };
        if *stored_name != name {
            mismatch = Some(format!("expected `{name}`, checkpoint has `{stored_name}`"));
            return;
        }
        if shape != t.shape() {
            mismatch = Some(format!(
                "`{name}`: model shape {:?} vs checkpoint {:?}",
                t.shape(),
                shape
            ));
            return;
        }
        t.values_mut().copy_from_slice(values);
        idx += 1;
    });
    if let Some(why) = mismatch {
        return Err(Error::Checkpoint(why));
    }
    if idx != loaded.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} extra tensors",
            loaded.len() - idx
        )));
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
