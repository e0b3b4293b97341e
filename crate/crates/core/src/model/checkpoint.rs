//! Checkpoint files: a self-describing JSON header followed by raw
//! little-endian f64 tensors in declaration order. Loading rebuilds the
//! parameter set bit-for-bit, which stateless resume and the sweep
//! orchestrator both rely on.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::EncoderConfig;
use super::params::ParameterSet;

const MAGIC: &[u8; 8] = b"SLCKPT01";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    step: u64,
    seed: u64,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub step: u64,
    pub seed: u64,
    pub params: ParameterSet,
}

pub fn save_checkpoint(
    path: &Path,
    config: &EncoderConfig,
    params: &ParameterSet,
    step: u64,
    seed: u64,
) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        step,
        seed,
    })?;
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    for (_, slice) in params.tensors() {
        for &x in slice {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::input(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 8];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::input(format!("{}: too short for a checkpoint", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::input(format!(
            "{}: bad magic {magic:?}, not a checkpoint file",
            path.display()
        )));
    }
    let mut len4 = [0u8; 4];
    reader
        .read_exact(&mut len4)
        .map_err(|_| Error::input(format!("{}: truncated header length", path.display())))?;
    let header_len = u32::from_le_bytes(len4) as usize;
    let mut header_bytes = vec![0u8; header_len];
    reader
        .read_exact(&mut header_bytes)
        .map_err(|_| Error::input(format!("{}: truncated header", path.display())))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::input(format!("{}: bad header: {e}", path.display())))?;
    header.config.validate()?;

    let mut params = ParameterSet::zeros(&header.config);
    let mut buf = [0u8; 8];
    for (name, slice) in params.tensors_mut() {
        for x in slice {
            reader.read_exact(&mut buf).map_err(|_| {
                Error::input(format!("{}: truncated in tensor {name}", path.display()))
            })?;
            *x = f64::from_le_bytes(buf);
        }
    }
    let mut extra = [0u8; 1];
    if reader.read(&mut extra)? != 0 {
        return Err(Error::input(format!(
            "{}: trailing bytes after parameters",
            path.display()
        )));
    }
    if !params.all_finite() {
        return Err(Error::numeric(format!(
            "{}: checkpoint contains non-finite values",
            path.display()
        )));
    }
    Ok(Checkpoint {
        config: header.config,
        step: header.step,
        seed: header.seed,
        params,
    })
}
