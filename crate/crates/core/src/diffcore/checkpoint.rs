//! VGNP parameter checkpoints.
//!
//! Layout, all integers little-endian:
//! magic `VGNP`, version u32, tensor count u32, then per tensor:
//! name length u32 + UTF-8 name, rank u32, dims as u64 each, data as f64.
//! Round trips are bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{DiffError, Param, Tensor};

const MAGIC: &[u8; 4] = b"VGNP";
const VERSION: u32 = 1;

pub fn save_params(path: &Path, params: &[&Param]) -> Result<(), DiffError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name)?;
        w.write_u32::<LittleEndian>(p.value.shape().len() as u32)?;
        for &d in p.value.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in p.value.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Vec<(String, Tensor)>, DiffError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(DiffError::BadMagic {
            expected: "VGNP",
            found: magic.to_vec(),
        });
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(DiffError::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| DiffError::Corrupt("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(read_f64(&mut r)?);
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Loads a checkpoint into an existing parameter list, matching by name.
pub fn restore_params(path: &Path, params: &mut [&mut Param]) -> Result<(), DiffError> {
    let loaded = load_params(path)?;
    for p in params.iter_mut() {
        let (_, tensor) = loaded
            .iter()
            .find(|(n, _)| *n == p.name)
            .ok_or_else(|| DiffError::MissingTensor(p.name.clone()))?;
        if tensor.shape() != p.value.shape() {
            return Err(DiffError::ShapeMismatch {
                op: "restore_params",
                lhs: p.value.shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        p.value = tensor.clone();
        p.grad = None;
    }
    Ok(())
}

fn truncated(e: io::Error) -> DiffError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        DiffError::Truncated
    } else {
        DiffError::Io(e.to_string())
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), DiffError> {
    r.read_exact(buf).map_err(truncated)
}

fn read_u32(r: &mut impl Read) -> Result<u32, DiffError> {
    r.read_u32::<LittleEndian>().map_err(truncated)
}

fn read_u64(r: &mut impl Read) -> Result<u64, DiffError> {
    r.read_u64::<LittleEndian>().map_err(truncated)
}

fn read_f64(r: &mut impl Read) -> Result<f64, DiffError> {
    r.read_f64::<LittleEndian>().map_err(truncated)
}
