//! Flat named-tensor files.
//!
//! Layout (little endian): magic `KANTENS1`, `u64` tensor count, then per
//! tensor `u32` name length, UTF-8 name, `u64` rows, `u64` cols and
//! `rows·cols` `f64` values in row-major order.

use super::{KanError, Result};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"KANTENS1";

pub type NamedTensors = Vec<(String, Tensor)>;

pub fn write_named<W: Write>(w: &mut W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        let len = u32::try_from(bytes.len()).map_err(|_| KanError::Checkpoint(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_named<R: Read>(r: &mut R) -> Result<NamedTensors> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(KanError::Checkpoint("bad magic; not a named-tensor file".into()));
    }
    let count = read_u64(r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let mut lb = [0u8; 4];
        r.read_exact(&mut lb)?;
        let mut name = vec![0u8; u32::from_le_bytes(lb) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| KanError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| KanError::Checkpoint(format!("{name}: shape overflow")))?;
        let mut data = Vec::with_capacity(len.min(1 << 24));
        let mut b = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

pub fn save_named(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_named(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load_named(path: &Path) -> Result<NamedTensors> {
    read_named(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
