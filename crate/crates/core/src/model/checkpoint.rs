//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ICTN" | version: u8 = 1
//! repeated, ordered by name:
//!   name_len: u32 | name: UTF-8 | rank: u8 | extents: rank × u32 | values: f64 × product(extents)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Parameter;

pub const MAGIC: &[u8; 4] = b"ICTN";
pub const VERSION: u8 = 1;

/// A decoded checkpoint entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn write_parameters<W: Write>(mut out: W, params: &[Parameter]) -> Result<()> {
    let mut sorted: Vec<&Parameter> = params.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION])?;
    for p in sorted {
        let name = p.name.as_bytes();
        let name_len = u32::try_from(name.len()).map_err(|_| Error::Checkpoint("name too long".into()))?;
        out.write_all(&name_len.to_le_bytes())?;
        out.write_all(name)?;
        let shape = p.tensor.shape();
        let rank = u8::try_from(shape.len()).map_err(|_| Error::Checkpoint("rank too large".into()))?;
        out.write_all(&[rank])?;
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint("extent too large".into()))?;
            out.write_all(&d.to_le_bytes())?;
        }
        for v in p.tensor.data().iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save<W: Write>(out: W, model: &Model) -> Result<()> {
    write_parameters(out, model.parameters())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))
}

/// Reads all entries.
pub fn read<R: Read>(mut input: R) -> Result<BTreeMap<String, Entry>> {
    let mut header = [0u8; 5];
    read_exact(&mut input, &mut header, "header")?;
    if &header[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    if header[4] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header[4])));
    }
    let mut entries = BTreeMap::new();
    loop {
        let mut len = [0u8; 4];
        // a clean end of stream is only allowed between entries
        match input.read(&mut len[..1])? {
            0 => break,
            _ => read_exact(&mut input, &mut len[1..], "name length")?,
        }
        let name_len = u32::from_le_bytes(len) as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut input, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut input, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 4];
            read_exact(&mut input, &mut d, "extent")?;
            shape.push(u32::from_le_bytes(d) as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: extents overflow")))?;
        let mut values = Vec::with_capacity(count.min(1 << 24));
        let mut buf = [0u8; 8];
        for _ in 0..count {
            read_exact(&mut input, &mut buf, "values")?;
            values.push(f64::from_le_bytes(buf));
        }
        if entries.insert(name.clone(), Entry { shape, values }).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
    }
    Ok(entries)
}

/// Loads a checkpoint into `model`. Names and shapes must match exactly.
pub fn load_into<R: Read>(input: R, model: &Model) -> Result<()> {
    let entries = read(input)?;
    let params = model.parameters();
    if entries.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            entries.len(),
            params.len()
        )));
    }
    for p in params {
        let entry = entries
            .get(&p.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
        if entry.shape != p.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?} in checkpoint, {:?} in model",
                p.name,
                entry.shape,
                p.tensor.shape()
            )));
        }
    }
    for p in params {
        p.tensor.data_mut().copy_from_slice(&entries[&p.name].values);
    }
    Ok(())
}
