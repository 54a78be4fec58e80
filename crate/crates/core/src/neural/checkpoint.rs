//! Binary checkpoint format.
//!
//! ```text
//! "TRIO1"  version:u8
//! repeated until EOF:
//!   name_len:u32  name:[u8; name_len]  rank:u32  dims:[u32; rank]  values:[f32; prod(dims)]
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{ErrorKind, Read, Write};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"TRIO1";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn write_checkpoint<W: Write>(store: &ParamStore<f32>, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    for t in store.tensors() {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Checkpoint(format!("truncated record: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore<f32>> {
    let mut header = [0u8; 6];
    r.read_exact(&mut header).map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &header[..5] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    if header[5] != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header[5])));
    }
    let mut store = ParamStore::new();
    loop {
        let mut first = [0u8; 4];
        match r.read(&mut first[..1]) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
        r.read_exact(&mut first[1..]).map_err(|e| Error::Checkpoint(format!("truncated record: {e}")))?;
        let name_len = u32::from_le_bytes(first) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(|e| Error::Checkpoint(format!("truncated values of '{name}': {e}")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        store.add(name, dims, data)?;
    }
    Ok(store)
}
