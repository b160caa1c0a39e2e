//! `PEMW` model files.
//!
//! Layout (little-endian): magic, u32 version, u64 arch hash, u32 config
//! length + config JSON, f32 weights in layer order, then the training log
//! as u32 epoch count, f64 losses and u32 thread count.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{ModelBundle, ModelConfig, TrainLog};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"PEMW";
pub const MODEL_VERSION: u32 = 1;

/// Refuse configs larger than this when reading (guards corrupt lengths).
const MAX_CONFIG_BYTES: u32 = 1 << 20;

pub fn save_model(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write_model(bundle, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_model<W: Write>(bundle: &ModelBundle, out: &mut W) -> Result<()> {
    let json = bundle.config.canonical_json();
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&MODEL_VERSION.to_le_bytes())?;
    out.write_all(&bundle.config.arch_hash().to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(json.as_bytes())?;
    let mut buf = Vec::with_capacity(bundle.weights.len() * 4);
    for w in &bundle.weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    out.write_all(&buf)?;
    let log = &bundle.train_log;
    out.write_all(&(log.epoch_loss.len() as u32).to_le_bytes())?;
    for l in &log.epoch_loss {
        out.write_all(&l.to_le_bytes())?;
    }
    out.write_all(&log.threads.to_le_bytes())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle> {
    read_model(&mut BufReader::new(File::open(path.as_ref())?))
}

fn corrupt(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::CorruptModel("truncated file".into())
    } else {
        Error::Io(e)
    }
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input.read_exact(&mut b).map_err(corrupt)?;
    Ok(b)
}

pub fn read_model<R: Read>(input: &mut R) -> Result<ModelBundle> {
    let magic = read_array::<4, _>(input)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::BadMagic { expected: "PEMW" });
    }
    let version = u32::from_le_bytes(read_array(input)?);
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let stored_hash = u64::from_le_bytes(read_array(input)?);
    let len = u32::from_le_bytes(read_array(input)?);
    if len > MAX_CONFIG_BYTES {
        return Err(Error::CorruptModel(format!("config length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json).map_err(corrupt)?;
    let config: ModelConfig =
        serde_json::from_slice(&json).map_err(|e| Error::CorruptModel(format!("config: {e}")))?;
    if config.arch_hash() != stored_hash {
        return Err(Error::IncompatibleModel);
    }
    config.validate().map_err(|e| Error::CorruptModel(e.to_string()))?;
    let n = config.param_count();
    let mut raw = vec![0u8; n * 4];
    input.read_exact(&mut raw).map_err(corrupt)?;
    let weights: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::CorruptModel("non-finite weight".into()));
    }
    let epochs = u32::from_le_bytes(read_array(input)?);
    if epochs as usize > config.epochs.max(1) * 16 {
        return Err(Error::CorruptModel(format!("train log length {epochs}")));
    }
    let mut epoch_loss = Vec::with_capacity(epochs as usize);
    for _ in 0..epochs {
        epoch_loss.push(f64::from_le_bytes(read_array(input)?));
    }
    let threads = u32::from_le_bytes(read_array(input)?);
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::CorruptModel("trailing bytes".into()));
    }
    Ok(ModelBundle {
        config,
        weights,
        train_log: TrainLog { epoch_loss, threads },
    })
}
