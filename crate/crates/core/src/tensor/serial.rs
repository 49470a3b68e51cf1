//! Binary tensor format used by checkpoints: magic `TNSR`, u32 rank,
//! u32 dims, then raw little-endian f32 data.

use std::io::{self, Read, Write};

use super::TensorData;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TNSR";

#[derive(Debug, Error)]
pub enum SerialError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (expected TNSR)")]
    BadMagic,
    #[error("unreasonable tensor header (rank {rank}, {elems} elements)")]
    BadHeader { rank: usize, elems: usize },
}

const MAX_RANK: usize = 8;
const MAX_ELEMS: usize = 1 << 30;

pub fn write_tensor<W: Write>(w: &mut W, t: &TensorData) -> Result<(), SerialError> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
    for d in &t.shape {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<TensorData, SerialError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SerialError::BadMagic);
    }
    let rank = read_u32(r)? as usize;
    if rank > MAX_RANK {
        return Err(SerialError::BadHeader { rank, elems: 0 });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let elems: usize = shape.iter().product();
    if elems > MAX_ELEMS {
        return Err(SerialError::BadHeader { rank, elems });
    }
    let mut buf = vec![0u8; elems * 4];
    r.read_exact(&mut buf)?;
    let data = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Ok(TensorData { shape, data })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, SerialError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
