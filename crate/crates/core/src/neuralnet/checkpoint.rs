//! Parameter checkpoints.
//!
//! ```text
//! magic "MINNCKPT" | version u32 | descriptor_len u64 | descriptor (UTF-8 JSON)
//! count u64 | count × f64
//! ```
//!
//! All integers and floats little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MINNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, descriptor: &serde_json::Value, params: &[f64]) -> Result<()> {
    let desc = serde_json::to_vec(descriptor).map_err(|e| Error::format(path, e.to_string()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
    put(CHECKPOINT_MAGIC)?;
    put(&CHECKPOINT_VERSION.to_le_bytes())?;
    put(&(desc.len() as u64).to_le_bytes())?;
    put(&desc)?;
    put(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        put(&p.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut take = |buf: &mut [u8]| {
        r.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(path, "truncated checkpoint")
            } else {
                Error::io(path, e)
            }
        })
    };
    let mut magic = [0u8; 8];
    take(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let mut b4 = [0u8; 4];
    take(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    take(&mut b8)?;
    let dlen = u64::from_le_bytes(b8) as usize;
    if dlen > 1 << 26 {
        return Err(Error::format(path, "descriptor length is implausible"));
    }
    let mut desc = vec![0u8; dlen];
    take(&mut desc)?;
    let descriptor = serde_json::from_slice(&desc).map_err(|e| Error::format(path, e.to_string()))?;
    take(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut params = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        take(&mut b8)?;
        params.push(f64::from_le_bytes(b8));
    }
    Ok((descriptor, params))
}
