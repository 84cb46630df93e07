//! Binary parameter container.
//!
//! Layout: magic `SDCKPT\0\0`, format version (u32), array count (u64), then per array the
//! name length (u64), UTF-8 name, rank (u64), dims (u64 each) and the little-endian f64
//! payload. All integers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SDCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_params(w: &mut impl Write, params: &ParamSet) -> Result<()> {
    let io = |e| Error::io("writing checkpoint", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(params.len() as u64).to_le_bytes()).map_err(io)?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.write_all(&(name.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes()).map_err(io)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}

/// Upper bound on any single length field, to reject garbage before allocating.
const MAX_LEN: u64 = 1 << 32;

pub fn read_params(r: &mut impl Read) -> Result<ParamSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb).map_err(|_| Error::Checkpoint("truncated version".into()))?;
    let version = u32::from_le_bytes(vb);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = read_u64(r)?;
    if count > MAX_LEN {
        return Err(Error::Checkpoint(format!("implausible array count {count}")));
    }
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u64(r)?;
        if name_len > 4096 {
            return Err(Error::Checkpoint(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(|_| Error::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
        let rank = read_u64(r)?;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut n: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(r)?;
            n = n.saturating_mul(d);
            shape.push(d as usize);
        }
        if n > MAX_LEN {
            return Err(Error::Checkpoint(format!("implausible array size {n}")));
        }
        let mut bytes = vec![0u8; n as usize * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("truncated payload for `{name}`")))?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &ParamSet) -> Result<()> {
    let mut buf = Vec::new();
    write_params(&mut buf, params)?;
    crate::io::write_atomic(path, &buf)
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_params(&mut bytes.as_slice())
}
