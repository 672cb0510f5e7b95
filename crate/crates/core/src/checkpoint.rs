//! Binary checkpoints that capture a training run exactly: configuration,
//! iteration counter, RNG position, parameters, and optimizer momentum, so a
//! restored run continues bit for bit where the original left off.
//!
//! Layout: an 8-byte magic, a format version, a length-prefixed TOML header,
//! then each parameter (name, shape, little-endian f64 data) in registration
//! order, then the momentum buffers in the same order. TOML rather than JSON
//! for the header because level scale bounds can be infinite.

use crate::config::ModelConfig;
use crate::params::{ParamId, ParamSet};
use crate::training::{TrainConfig, Trainer};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"ADAPTCKP";
const FORMAT_VERSION: u32 = 1;
/// Caps name/shape/tensor sizes so a corrupt header cannot trigger a huge
/// allocation.
const SANE_LIMIT: u64 = 1 << 33;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

/// Serialized RNG position: base seed, stream id, and word offset. The
/// offset is a decimal string because it is a 128-bit integer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: Vec<u8>,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> RngState {
        RngState {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, CheckpointError> {
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| CheckpointError::Header(format!("seed must be 32 bytes, got {}", self.seed.len())))?;
        let word_pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| CheckpointError::Header(format!("bad word_pos {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

/// Human-readable header stored ahead of the tensor data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub rng: RngState,
}

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &ArrayD<f64>) -> Result<(), CheckpointError> {
    w.write_u64::<LittleEndian>(name.len() as u64)?;
    w.write_all(name.as_bytes())?;
    w.write_u64::<LittleEndian>(t.ndim() as u64)?;
    for &d in t.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &x in t.iter() {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, ArrayD<f64>), CheckpointError> {
    let name_len = r.read_u64::<LittleEndian>()?;
    if name_len > SANE_LIMIT {
        return Err(CheckpointError::Corrupt(format!("tensor name length {name_len}")));
    }
    let mut name = vec![0u8; name_len as usize];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| CheckpointError::Corrupt("tensor name is not utf-8".into()))?;
    let ndim = r.read_u64::<LittleEndian>()?;
    if ndim > 8 {
        return Err(CheckpointError::Corrupt(format!("tensor rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim as usize);
    let mut len = 1u64;
    for _ in 0..ndim {
        let d = r.read_u64::<LittleEndian>()?;
        len = len.saturating_mul(d.max(1));
        if len > SANE_LIMIT {
            return Err(CheckpointError::Corrupt(format!("tensor {name} is implausibly large")));
        }
        shape.push(d as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.read_f64::<LittleEndian>()?);
    }
    let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
        .map_err(|e| CheckpointError::Corrupt(format!("tensor {name}: {e}")))?;
    Ok((name, arr))
}

/// Write the full training state to `path`.
pub fn save(path: &Path, trainer: &Trainer) -> Result<(), CheckpointError> {
    let meta = CheckpointMeta {
        iteration: trainer.iteration,
        model: trainer.model.cfg.clone(),
        train: trainer.tcfg.clone(),
        rng: RngState::capture(&trainer.rng),
    };
    let header = toml::to_string(&meta).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(header.len() as u64)?;
    w.write_all(header.as_bytes())?;
    w.write_u64::<LittleEndian>(trainer.params.len() as u64)?;
    for (name, value) in trainer.params.iter() {
        write_tensor(&mut w, name, value)?;
    }
    for i in 0..trainer.params.len() {
        let id = ParamId(i);
        write_tensor(&mut w, trainer.params.name(id), trainer.opt.velocity(id))?;
    }
    w.flush()?;
    Ok(())
}

/// Restore a trainer from `path`, rebuilding the model from the stored
/// configuration and verifying that every tensor lines up by name and shape.
pub fn load(path: &Path) -> Result<Trainer, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let header_len = r.read_u64::<LittleEndian>()?;
    if header_len > SANE_LIMIT {
        return Err(CheckpointError::Corrupt(format!("header length {header_len}")));
    }
    let mut header = vec![0u8; header_len as usize];
    r.read_exact(&mut header)?;
    let header = String::from_utf8(header)
        .map_err(|_| CheckpointError::Corrupt("header is not utf-8".into()))?;
    let meta: CheckpointMeta =
        toml::from_str(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let mut trainer = Trainer::new(&meta.model, &meta.train)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;

    let n_params = r.read_u64::<LittleEndian>()?;
    if n_params as usize != trainer.params.len() {
        return Err(CheckpointError::Mismatch(format!(
            "expected {} tensors, checkpoint has {}",
            trainer.params.len(),
            n_params
        )));
    }
    for i in 0..trainer.params.len() {
        let id = ParamId(i);
        let (name, value) = read_tensor(&mut r)?;
        check_alignment(&trainer.params, id, &name, value.shape())?;
        *trainer.params.value_mut(id) = value;
    }
    for i in 0..trainer.params.len() {
        let id = ParamId(i);
        let (name, value) = read_tensor(&mut r)?;
        check_alignment(&trainer.params, id, &name, value.shape())?;
        *trainer.opt.velocity_mut(id) = value;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes after tensor data".into()));
    }

    trainer.iteration = meta.iteration;
    trainer.rng = meta.rng.restore()?;
    Ok(trainer)
}

fn check_alignment(
    params: &ParamSet,
    id: ParamId,
    name: &str,
    shape: &[usize],
) -> Result<(), CheckpointError> {
    if params.name(id) != name {
        return Err(CheckpointError::Mismatch(format!(
            "tensor {} is named {name:?}, expected {:?}",
            id.0,
            params.name(id)
        )));
    }
    if params.value(id).shape() != shape {
        return Err(CheckpointError::Mismatch(format!(
            "tensor {name:?} has shape {shape:?}, expected {:?}",
            params.value(id).shape()
        )));
    }
    Ok(())
}
