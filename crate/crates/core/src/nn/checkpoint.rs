//! Parameter checkpoints (`RACP`, little-endian):
//!
//! ```text
//! "RACP" | u32 version = 1 | u32 n_records
//! per record: u32 name_len, name (UTF-8) | u32 ndim, ndim * u64 dims | prod(dims) f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Param, Parameterized, Real};
use crate::binio;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RACP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_checkpoint<W: Write>(w: &mut W, params: &[&Param<f32>]) -> Result<()> {
    binio::write_header(w, &CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for p in params {
        binio::write_str(w, &p.name)?;
        w.write_u32::<LittleEndian>(p.shape.len() as u32)?;
        for &d in &p.shape {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        binio::write_f32s(w, &p.value)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Vec<ParamRecord>> {
    binio::read_header(r, &CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let name = binio::read_str(r)?;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::Truncated)?;
        let data = binio::read_f32s(r, len)?;
        out.push(ParamRecord { name, shape, data });
    }
    binio::expect_eof(r)?;
    Ok(out)
}

pub fn save_params(path: impl AsRef<Path>, params: &[&Param<f32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<ParamRecord>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

/// Copies records into `model` by name; every model parameter must be present
/// with a matching shape.
pub fn restore<T: Real, M: Parameterized<T>>(model: &mut M, records: &[ParamRecord]) -> Result<()> {
    for p in model.params_mut() {
        let rec = records
            .iter()
            .find(|r| r.name == p.name)
            .ok_or_else(|| Error::Malformed(format!("checkpoint lacks parameter {}", p.name)))?;
        if rec.shape != p.shape {
            return Err(Error::Malformed(format!(
                "shape of {} is {:?} in checkpoint, {:?} in model",
                p.name, rec.shape, p.shape
            )));
        }
        for (dst, &src) in p.value.iter_mut().zip(&rec.data) {
            *dst = T::from_f32(src);
        }
    }
    Ok(())
}
