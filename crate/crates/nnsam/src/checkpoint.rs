//! Checkpoint files.
//!
//! Layout: magic `b"NNSAMCK1"`, a little-endian `u32` header length, a
//! JSON header, then a tensor archive (see [`crate::archive`]) holding
//! the trainable parameters followed by the optimizer momentum buffers
//! (named `optim/<param>`). The frozen encoder is rebuilt from its spec.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nnsam_core::autoconfig::PlanConfig;
use nnsam_core::losses::LossWeights;
use serde::{Deserialize, Serialize};

use crate::archive::{read_tensors, write_tensors};
use crate::error::{io_err, Error, Result};
use crate::model::{ModelOptions, NnSamModel};
use crate::nn::Param;
use crate::optim::Sgd;
use crate::train::{RunConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"NNSAMCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub plan: PlanConfig,
    pub config: RunConfig,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub options: ModelOptions,
    pub state: TrainState,
    /// Checksum of the frozen encoder the weights were trained against.
    pub frozen_checksum: Option<String>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: NnSamModel,
    pub optimizer: Sgd,
}

pub fn save(path: &Path, header: &CheckpointHeader, model: &NnSamModel, optimizer: &Sgd) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let tmp = path.with_extension("tmp");
    let file = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    let params = model.trainable_params();
    let buffers: Vec<Param> = params
        .iter()
        .zip(&optimizer.buffers)
        .map(|(p, b)| Param::new(format!("optim/{}", p.name), p.shape.clone(), b.clone()))
        .collect();
    let write = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        write_tensors(&mut *w, params.iter().copied().chain(&buffers))?;
        w.flush()
    };
    write(&mut w).map_err(io_err(&tmp))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| bad("truncated"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| bad(&e.to_string()))?;

    let mut model = NnSamModel::build(&header.plan, &header.options, header.seed)?;
    if model.frozen_checksum() != header.frozen_checksum {
        return Err(bad("frozen encoder differs from the one used in training"));
    }
    let n = model.trainable_param_count();
    let tensors = read_tensors(r, 2 * n).map_err(|e| bad(&e))?;
    let count = model.trainable_params().len();
    if tensors.len() != count && tensors.len() != 2 * count {
        return Err(bad("tensor count does not match the model"));
    }
    let (weights, buffers) = tensors.split_at(count);
    for (p, t) in model.trainable_params_mut().into_iter().zip(weights) {
        if p.name != t.name || p.shape != t.shape {
            return Err(bad(&format!("tensor {} does not match parameter {}", t.name, p.name)));
        }
        p.value.clone_from(&t.value);
    }
    let mut optimizer = Sgd::new(header.plan.momentum, header.plan.weight_decay);
    if !buffers.is_empty() {
        optimizer.buffers = buffers.iter().map(|b| b.value.clone()).collect();
    }
    Ok(Checkpoint { header, model, optimizer })
}
