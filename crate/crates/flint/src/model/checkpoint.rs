//! Checkpoint directory format: `manifest.json` (architecture, mode, training
//! state, normalization) plus `params.bin` (named f64 tensors, little-endian).
//! Loading rebuilds the architecture from the manifest and fills values by
//! name, so any architecture/payload mismatch is caught.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FlintError, Result};
use crate::tensor::{Real, Tensor};

use super::config::{LossWeights, Mode, ModelConfig};
use super::params::{build_model, ParameterSet};

pub const CHECKPOINT_FORMAT: &str = "flint-checkpoint-v1";
const PARAMS_MAGIC: &[u8; 8] = b"FLNTPAR1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dims: usize,
    pub num_blocks: usize,
    pub block_channels: Vec<usize>,
    pub teacher_channels: usize,
    pub kernel_size: usize,
    pub mode: Mode,
    /// Time conditioning convention: tau = (t - s) / (u - s).
    pub tau_convention: String,
    pub epoch: usize,
    pub best_val: f64,
    /// Density normalization range the model was trained with.
    pub norm_lo: f32,
    pub norm_hi: f32,
    #[serde(default)]
    pub loss_weights: Option<LossWeights>,
}

impl CheckpointManifest {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            dims: self.dims,
            num_blocks: self.num_blocks,
            block_channels: self.block_channels.clone(),
            teacher_channels: self.teacher_channels,
            kernel_size: self.kernel_size,
            mode: self.mode,
            loss_weights: self.loss_weights.clone().unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainingState {
    pub epoch: usize,
    pub best_val: f64,
    pub norm_range: (f32, f32),
}

/// Save parameters and metadata atomically (write to a temp dir, then swap).
pub fn save_checkpoint<F: Real>(
    params: &ParameterSet<F>,
    state: &TrainingState,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let config = &params.config;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        dims: config.dims,
        num_blocks: config.num_blocks,
        block_channels: config.block_channels.clone(),
        teacher_channels: config.teacher_channels,
        kernel_size: config.kernel_size,
        mode: config.mode,
        tau_convention: "normalized".to_string(),
        epoch: state.epoch,
        // JSON has no infinity; an untrained checkpoint records f64::MAX
        best_val: if state.best_val.is_finite() {
            state.best_val
        } else {
            f64::MAX
        },
        norm_lo: state.norm_range.0,
        norm_hi: state.norm_range.1,
        loss_weights: Some(config.loss_weights.clone()),
    };
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    serde_json::to_writer_pretty(fs::File::create(tmp.join("manifest.json"))?, &manifest)?;
    write_params(params, tmp.join("params.bin"))?;

    let old = path.with_extension("old");
    if path.exists() {
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        fs::rename(path, &old)?;
    }
    fs::rename(&tmp, path)?;
    if old.exists() {
        fs::remove_dir_all(&old)?;
    }
    Ok(())
}

fn write_params<F: Real>(params: &ParameterSet<F>, path: PathBuf) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(PARAMS_MAGIC)?;
    out.write_all(&(params.params.len() as u32).to_le_bytes())?;
    for p in &params.params {
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(p.value.shape().len() as u8).to_le_bytes())?;
        for &d in p.value.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in p.value.data() {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Load a checkpoint: rebuilds the architecture, then fills parameter values
/// by name. Returns the parameter set, its config, and the training state.
pub fn load_checkpoint<F: Real>(
    path: impl AsRef<Path>,
) -> Result<(ParameterSet<F>, ModelConfig, TrainingState)> {
    let path = path.as_ref();
    let mpath = path.join("manifest.json");
    if !mpath.is_file() {
        return Err(FlintError::MissingFile(mpath));
    }
    let manifest: CheckpointManifest = serde_json::from_reader(fs::File::open(&mpath)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(FlintError::Config(format!(
            "unsupported checkpoint format {}",
            manifest.format
        )));
    }
    let config = manifest.config();
    config.validate()?;
    let mut params = build_model::<F>(&config, 0)?;

    let mut reader = BufReader::new(fs::File::open(path.join("params.bin"))?);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != PARAMS_MAGIC {
        return Err(FlintError::Config("bad parameter payload magic".into()));
    }
    let mut u32b = [0u8; 4];
    reader.read_exact(&mut u32b)?;
    let count = u32::from_le_bytes(u32b) as usize;
    let mut filled = vec![false; params.params.len()];
    for _ in 0..count {
        let mut u16b = [0u8; 2];
        reader.read_exact(&mut u16b)?;
        let name_len = u16::from_le_bytes(u16b) as usize;
        let mut name = vec![0u8; name_len];
        reader.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| FlintError::Config("invalid parameter name encoding".into()))?;
        let mut u8b = [0u8; 1];
        reader.read_exact(&mut u8b)?;
        let ndim = u8b[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            reader.read_exact(&mut u32b)?;
            shape.push(u32::from_le_bytes(u32b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut f64b = [0u8; 8];
        for _ in 0..n {
            reader.read_exact(&mut f64b)?;
            data.push(F::of(f64::from_le_bytes(f64b)));
        }
        let pos = params.position(&name).ok_or_else(|| {
            FlintError::Config(format!("checkpoint parameter {name} not in architecture"))
        })?;
        if params.params[pos].value.shape() != shape.as_slice() {
            return Err(FlintError::Config(format!(
                "checkpoint parameter {name}: shape {:?} vs architecture {:?}",
                shape,
                params.params[pos].value.shape()
            )));
        }
        params.params[pos].value = Tensor::from_vec(&shape, data);
        filled[pos] = true;
    }
    // Allow stripped-teacher checkpoints; everything else must be present.
    let missing_student: Vec<&str> = params
        .params
        .iter()
        .zip(&filled)
        .filter(|(p, &f)| !f && p.block != super::params::BlockTag::Teacher)
        .map(|(p, _)| p.name.as_str())
        .collect();
    if !missing_student.is_empty() {
        return Err(FlintError::Config(format!(
            "checkpoint missing parameters: {missing_student:?}"
        )));
    }
    if params
        .params
        .iter()
        .zip(&filled)
        .any(|(p, &f)| !f && p.block == super::params::BlockTag::Teacher)
    {
        params.strip_teacher();
    }

    let state = TrainingState {
        epoch: manifest.epoch,
        best_val: manifest.best_val,
        norm_range: (manifest.norm_lo, manifest.norm_hi),
    };
    Ok((params, config, state))
}
