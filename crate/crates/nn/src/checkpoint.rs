//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian `u64`, floats little-endian IEEE-754 `f64`):
//!
//! ```text
//! magic    b"RSNNCKPT"
//! version  u64 = 1
//! n_sets   u64
//! per set:
//!   name_len u64, name bytes (UTF-8)
//!   step     u64                      Adam step counter
//!   n_tensors u64
//!   per tensor:
//!     name_len u64, name bytes
//!     ndim u64, dims u64 × ndim
//!     values  f64 × product(dims)     row-major
//!     first   f64 × product(dims)     Adam first moment
//!     second  f64 × product(dims)     Adam second moment
//! ```
//!
//! Sets and tensors are written in insertion order, so identical parameter
//! sets produce identical bytes.

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::params::{AdamMoments, ParameterSet};
use crate::tensor::TensorBuffer;

const MAGIC: &[u8; 8] = b"RSNNCKPT";
const VERSION: u64 = 1;

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let len = get_u64(r)? as usize;
    if len > 1 << 20 {
        return Err(NnError::Checkpoint(format!("implausible name length {len}")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| NnError::Checkpoint(e.to_string()))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut b = vec![0u8; n * 8];
    r.read_exact(&mut b)?;
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_checkpoint<W: Write>(w: &mut W, sets: &[(&str, &ParameterSet)]) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u64(w, VERSION)?;
    put_u64(w, sets.len() as u64)?;
    for (name, set) in sets {
        put_str(w, name)?;
        put_u64(w, set.step())?;
        put_u64(w, set.len() as u64)?;
        for (i, (tname, t)) in set.iter().enumerate() {
            put_str(w, tname)?;
            put_u64(w, t.shape().len() as u64)?;
            for d in t.shape() {
                put_u64(w, *d as u64)?;
            }
            put_f64s(w, t.values())?;
            let m = set.moments(i);
            put_f64s(w, &m.first)?;
            put_f64s(w, &m.second)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Vec<(String, ParameterSet)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = get_u64(r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let n_sets = get_u64(r)?;
    let mut out = Vec::new();
    for _ in 0..n_sets {
        let name = get_str(r)?;
        let step = get_u64(r)?;
        let n_tensors = get_u64(r)?;
        let mut set = ParameterSet::new();
        for i in 0..n_tensors as usize {
            let tname = get_str(r)?;
            let ndim = get_u64(r)? as usize;
            if ndim > 8 {
                return Err(NnError::Checkpoint(format!("implausible rank {ndim}")));
            }
            let shape = (0..ndim)
                .map(|_| get_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let values = get_f64s(r, len)?;
            let first = get_f64s(r, len)?;
            let second = get_f64s(r, len)?;
            set.insert(tname, TensorBuffer::new(shape, values)?)?;
            set.restore_state(i, AdamMoments { first, second });
        }
        set.set_step(step);
        out.push((name, set));
    }
    Ok(out)
}

/// Looks up a named set in a loaded checkpoint.
pub fn take_set(loaded: &mut Vec<(String, ParameterSet)>, name: &str) -> Result<ParameterSet> {
    let idx = loaded
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| NnError::Checkpoint(format!("checkpoint has no set '{name}'")))?;
    Ok(loaded.remove(idx).1)
}
