//! Binary tensor archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"NNSAMWT1"
//! u32    tensor count
//! repeated:
//!   u32 name length, name bytes (UTF-8)
//!   u32 ndim, ndim x u64 dims
//!   prod(dims) x f32 values
//! ```

use std::io::{Read, Write};

use crate::nn::Param;

pub const MAGIC: &[u8; 8] = b"NNSAMWT1";

pub fn write_tensors<'a>(mut w: impl Write, params: impl IntoIterator<Item = &'a Param>) -> std::io::Result<()> {
    let params: Vec<&Param> = params.into_iter().collect();
    w.write_all(MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for d in &p.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * p.value.len());
        for v in &p.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| format!("truncated archive: {e}"))?;
    Ok(u32::from_le_bytes(b))
}

/// Reads an archive; at most `max_values` floats in total are accepted.
pub fn read_tensors(mut r: impl Read, max_values: usize) -> Result<Vec<Param>, String> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| format!("truncated archive: {e}"))?;
    if &magic != MAGIC {
        return Err("bad magic".into());
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::new();
    let mut budget = max_values;
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 4096 {
            return Err("tensor name too long".into());
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| format!("truncated archive: {e}"))?;
        let name = String::from_utf8(name).map_err(|_| "tensor name is not UTF-8".to_string())?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 8 {
            return Err(format!("{name}: too many dimensions"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|e| format!("truncated archive: {e}"))?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| format!("{name}: shape overflow"))?;
        budget = budget.checked_sub(n).ok_or_else(|| format!("{name}: archive larger than expected"))?;
        let mut bytes = vec![0u8; 4 * n];
        r.read_exact(&mut bytes).map_err(|e| format!("{name}: truncated data: {e}"))?;
        let value = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push(Param::new(name, shape, value));
    }
    Ok(out)
}
