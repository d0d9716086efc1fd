//! Versioned flat binary of named arrays with shape headers.
//!
//! Layout (all integers little-endian):
//!   magic  b"PHWB"
//!   u32    format version (currently 1)
//!   u32    entry count
//!   per entry:
//!     u16      name length, then that many UTF-8 bytes
//!     u8       rank, then rank x u64 extents
//!     f64 x n  values in row-major storage order

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PHWB";
const VERSION: u32 = 1;

pub fn write_weights(mut writer: impl Write, entries: &[(String, Tensor)]) -> Result<()> {
    writer.write_all(MAGIC)?;
    writer.write_all(&VERSION.to_le_bytes())?;
    writer.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Contract(format!("weight name too long: {name}")));
        }
        writer.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        writer.write_all(name_bytes)?;
        let shape = tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::Contract(format!("rank too large for {name}")));
        }
        writer.write_all(&[shape.len() as u8])?;
        for extent in &shape {
            writer.write_all(&(*extent as u64).to_le_bytes())?;
        }
        tensor.with_data(|data| -> std::io::Result<()> {
            for value in data {
                writer.write_all(&value.to_le_bytes())?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn save_weights(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_weights(std::io::BufWriter::new(file), entries)
}

/// A loaded array: name, shape, values.
pub type LoadedWeight = (String, Vec<usize>, Vec<f64>);

pub fn read_weights(mut reader: impl Read) -> Result<Vec<LoadedWeight>> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Input("not a weight file (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    reader.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Input(format!(
            "unsupported weight format version {version} (expected {VERSION})"
        )));
    }
    reader.read_exact(&mut word)?;
    let count = u32::from_le_bytes(word);

    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut half = [0u8; 2];
        reader.read_exact(&mut half)?;
        let name_len = u16::from_le_bytes(half) as usize;
        let mut name_bytes = vec![0u8; name_len];
        reader.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Input("weight name is not UTF-8".into()))?;

        let mut rank_byte = [0u8; 1];
        reader.read_exact(&mut rank_byte)?;
        let mut shape = Vec::with_capacity(rank_byte[0] as usize);
        let mut extent = [0u8; 8];
        for _ in 0..rank_byte[0] {
            reader.read_exact(&mut extent)?;
            shape.push(u64::from_le_bytes(extent) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut value = [0u8; 8];
        for _ in 0..numel {
            reader.read_exact(&mut value)?;
            data.push(f64::from_le_bytes(value));
        }
        entries.push((name, shape, data));
    }
    Ok(entries)
}

pub fn load_weights(path: &Path) -> Result<Vec<LoadedWeight>> {
    let file = std::fs::File::open(path)?;
    read_weights(std::io::BufReader::new(file))
}

/// Copy loaded values into matching named parameters. Every loaded entry
/// must match a target by name and shape; targets without an entry are
/// left untouched.
pub fn load_into(targets: &[(String, Tensor)], loaded: &[LoadedWeight]) -> Result<()> {
    for (name, shape, data) in loaded {
        let (_, tensor) = targets
            .iter()
            .find(|(target_name, _)| target_name == name)
            .ok_or_else(|| Error::Input(format!("no parameter named {name}")))?;
        if &tensor.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "load_weights",
                left: tensor.shape(),
                right: shape.clone(),
            });
        }
        tensor.map_data_mut(|dst| dst.copy_from_slice(data));
    }
    Ok(())
}
