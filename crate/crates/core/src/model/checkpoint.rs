//! Binary checkpoint container.
//!
//! Layout (little-endian): `b"GFCK"`, `u32` format version, `u32` header
//! length, UTF-8 JSON header, `f32` payload, `u32` CRC32 of every preceding
//! byte. The header lists each tensor's name, shape and payload offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::network::{Network, NetworkSpec};
use crate::model::train::{TrainConfig, TrainingLog};
use crate::model::ModelError;
use crate::nn::params::{LayerKind, LayerParams, NormStats};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"GFCK";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 12;
const MIN_LEN: usize = PREFIX_LEN + 4;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
}

/// Provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_val_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub seed: u64,
    pub config: Option<TrainConfig>,
}

impl TrainingMetadata {
    pub fn from_log(log: &TrainingLog, config: &TrainConfig) -> Self {
        Self {
            epochs_run: log.epochs.len(),
            best_epoch: log.best_epoch,
            final_val_loss: log.final_val_loss(),
            best_val_loss: log.best_val_loss,
            seed: config.seed,
            config: Some(config.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub network: Network<f32>,
    pub metadata: TrainingMetadata,
}

impl Checkpoint {
    pub fn new<T: Scalar>(network: &Network<T>, metadata: TrainingMetadata) -> Self {
        Self { format_version: FORMAT_VERSION, network: network.cast(), metadata }
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.network.spec()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        decode(bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    topology: NetworkSpec,
    metadata: TrainingMetadata,
    layers: Vec<LayerEntry>,
    payload_floats: usize,
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    index: usize,
    kind: LayerKind,
    tensors: Vec<TensorEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_norm: Option<NormConfig>,
}

#[derive(Serialize, Deserialize)]
struct NormConfig {
    epsilon: f32,
    stats_momentum: f32,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    /// Offset into the payload, in bytes.
    offset: usize,
}

fn layer_tensors(p: &LayerParams<f32>) -> Vec<(&'static str, Shape, &[f32])> {
    let c = p.bias.len();
    let mut v = vec![("weights", p.weights.shape(), p.weights.data()), ("bias", Shape::new(1, c, 1, 1), &p.bias[..])];
    if let Some(s) = &p.norm {
        v.push(("running_mean", Shape::new(1, c, 1, 1), &s.running_mean[..]));
        v.push(("running_var", Shape::new(1, c, 1, 1), &s.running_var[..]));
    }
    v
}

fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut payload: Vec<f32> = Vec::new();
    let mut layers = Vec::new();
    for (index, p) in ck.network.layer_params().iter().enumerate() {
        let Some(p) = p else { continue };
        let tensors = layer_tensors(p)
            .into_iter()
            .map(|(name, shape, data)| {
                let entry = TensorEntry { name: name.to_string(), shape: shape.dims(), offset: payload.len() * 4 };
                payload.extend_from_slice(data);
                entry
            })
            .collect();
        let batch_norm = p.norm.as_ref().map(|s| NormConfig { epsilon: s.epsilon, stats_momentum: s.stats_momentum });
        layers.push(LayerEntry { index, kind: p.kind, tensors, batch_norm });
    }
    let header = Header {
        topology: ck.network.spec().clone(),
        metadata: ck.metadata.clone(),
        layers,
        payload_floats: payload.len(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(MIN_LEN + json.len() + payload.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ck.format_version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MIN_LEN {
        return Err(CheckpointError::Truncated(format!("{} bytes is shorter than the fixed framing", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = read_u32(bytes, bytes.len() - 4);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let version = read_u32(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let header_len = read_u32(bytes, 8) as usize;
    let header_end = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| CheckpointError::Truncated(format!("header of {header_len} bytes exceeds the file")))?;
    let header: Header =
        serde_json::from_slice(&body[PREFIX_LEN..header_end]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let payload_bytes = &body[header_end..];
    if payload_bytes.len() != header.payload_floats * 4 {
        return Err(CheckpointError::Truncated(format!(
            "payload holds {} bytes, header declares {} floats",
            payload_bytes.len(),
            header.payload_floats
        )));
    }
    let payload: Vec<f32> =
        payload_bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();

    let slot_count = header.topology.layers.len();
    let mut params: Vec<Option<LayerParams<f32>>> = vec![None; slot_count];
    for layer in &header.layers {
        if layer.index >= slot_count {
            return Err(CheckpointError::Header(format!("layer index {} out of range", layer.index)));
        }
        let fetch = |name: &str| -> Result<(Shape, Vec<f32>), CheckpointError> {
            let t = layer
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| CheckpointError::Header(format!("layer {} lacks tensor {name}", layer.index)))?;
            let [n, c, h, w] = t.shape;
            let shape = Shape::new(n, c, h, w);
            let start = t.offset / 4;
            let end = start + shape.len();
            if t.offset % 4 != 0 || end > payload.len() {
                return Err(CheckpointError::Header(format!("tensor {name} of layer {} lies outside the payload", layer.index)));
            }
            Ok((shape, payload[start..end].to_vec()))
        };
        let (wshape, wdata) = fetch("weights")?;
        let (_, bias) = fetch("bias")?;
        let weights = Tensor::from_vec(wshape, wdata).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let norm = match layer.kind {
            LayerKind::BatchNorm => {
                let cfg = layer
                    .batch_norm
                    .as_ref()
                    .ok_or_else(|| CheckpointError::Header(format!("batch-norm layer {} lacks its settings", layer.index)))?;
                Some(NormStats {
                    running_mean: fetch("running_mean")?.1,
                    running_var: fetch("running_var")?.1,
                    epsilon: cfg.epsilon,
                    stats_momentum: cfg.stats_momentum,
                })
            }
            _ => None,
        };
        params[layer.index] = Some(LayerParams { kind: layer.kind, weights, bias, norm });
    }
    let network = Network::from_parts(header.topology, params).map_err(|e| match e {
        ModelError::Topology(m) => CheckpointError::Header(m),
        other => CheckpointError::Header(other.to_string()),
    })?;
    Ok(Checkpoint { format_version: version, network, metadata: header.metadata })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
