//! SGT binary tensor interchange.
//!
//! Layout: magic `SGT1`, `u32` LE rank, `rank` × `u32` LE dims, then the
//! `f32` LE payload in row-major order. Files may hold several records back
//! to back.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"SGT1";

/// Encoded size of `t` in bytes.
pub fn encoded_len(t: &Tensor) -> usize {
    4 + 4 + 4 * t.rank() + 4 * t.len()
}

pub fn encode_into(t: &Tensor, out: &mut Vec<u8>) {
    out.reserve(encoded_len(t));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(t, &mut out);
    out
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        what: "SGT tensor",
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(at, "truncated"))
}

/// Decode one record starting at `offset`; returns the tensor and the offset
/// just past it.
pub fn decode_at(bytes: &[u8], offset: usize) -> Result<(Tensor, usize)> {
    if bytes.get(offset..offset + 4) != Some(MAGIC.as_slice()) {
        return Err(format_err(offset, "missing SGT1 magic"));
    }
    let rank = read_u32(bytes, offset + 4)? as usize;
    let mut at = offset + 8;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(bytes, at)? as usize);
        at += 4;
    }
    let n: usize = shape.iter().product();
    let end = at + 4 * n;
    let payload = bytes
        .get(at..end)
        .ok_or_else(|| format_err(bytes.len(), format!("payload needs {} bytes", 4 * n)))?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((Tensor::new(shape, data)?, end))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let (t, end) = decode_at(bytes, 0)?;
    if end != bytes.len() {
        return Err(format_err(end, "trailing bytes after tensor"));
    }
    Ok(t)
}

/// Decode every record in a concatenated stream.
pub fn decode_all(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let (t, next) = decode_at(bytes, at)?;
        out.push(t);
        at = next;
    }
    Ok(out)
}

pub fn write<W: Write>(t: &Tensor, w: &mut W) -> std::io::Result<()> {
    w.write_all(&encode(t))
}

pub fn read<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<reader>", e))?;
    decode(&bytes)
}

pub fn save(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
