//! Binary parameter checkpoints.
//!
//! Layout (little endian): `b"HERD"`, `u32` version, `u32` tensor count, then
//! per tensor: `u32` name length, UTF-8 name, `u32` rank, `rank × u32` dims,
//! `f32` payload.

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{HerdError, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"HERD";
const VERSION: u32 = 1;

pub fn write_params(w: &mut impl Write, ps: &ParameterSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(ps.len() as u32).to_le_bytes())?;
    for (name, t) in ps.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads every tensor into a fresh [`ParameterSet`].
pub fn read_params(r: &mut impl Read) -> Result<ParameterSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(HerdError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(HerdError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(r)?;
    let mut ps = ParameterSet::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        if len > 4096 {
            return Err(HerdError::Checkpoint(format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| HerdError::Checkpoint("name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(HerdError::Checkpoint(format!("rank {rank} for {name}")));
        }
        let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if ps.by_name(&name).is_some() {
            return Err(HerdError::Checkpoint(format!("duplicate tensor {name}")));
        }
        ps.add(name, Tensor { shape, data });
    }
    Ok(ps)
}

pub fn save(path: impl AsRef<Path>, ps: &ParameterSet) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(&mut f, ps)?;
    f.flush()?;
    Ok(())
}

/// Loads a checkpoint into `ps`, which must already have the same layout.
pub fn load_into(path: impl AsRef<Path>, ps: &mut ParameterSet) -> Result<()> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let loaded = read_params(&mut f)?;
    ps.copy_from(&loaded).map_err(|e| HerdError::Checkpoint(format!("layout mismatch: {e}")))
}
