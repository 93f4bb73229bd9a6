//! JSON checkpoints: a header (format version, architecture, seed, config
//! hash) plus parameter tensors as nested arrays. Floats are written in
//! shortest round-trip form (serde_json/ryu), so save -> load reproduces
//! bit-identical forward outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::Affine;
use crate::net::{Block, BlockSpec, QuantNet};
use crate::quant::QuantAct;
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorJson {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl TensorJson {
    fn from_tensor(t: &Tensor) -> Self {
        match t.shape.len() {
            1 => TensorJson::Vector(t.data.clone()),
            2 => TensorJson::Matrix(
                (0..t.rows()).map(|r| t.row(r).to_vec()).collect(),
            ),
            _ => TensorJson::Vector(t.data.clone()),
        }
    }

    fn to_vector(&self, field: &str) -> Result<Tensor> {
        match self {
            TensorJson::Vector(v) => Ok(Tensor::vector(v.clone())),
            _ => Err(Error::Checkpoint(format!("field {field:?} must be a flat array"))),
        }
    }

    fn to_matrix(&self, field: &str) -> Result<Tensor> {
        match self {
            TensorJson::Matrix(rows) => {
                let r = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|row| row.len() != c) {
                    return Err(Error::Checkpoint(format!("field {field:?} has ragged rows")));
                }
                Tensor::matrix(r, c, rows.iter().flatten().copied().collect())
            }
            _ => Err(Error::Checkpoint(format!("field {field:?} must be a nested array"))),
        }
    }

    fn to_scalar(&self, field: &str) -> Result<f64> {
        match self {
            TensorJson::Scalar(v) => Ok(*v),
            _ => Err(Error::Checkpoint(format!("field {field:?} must be a number"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub block: usize,
    pub name: String,
    pub value: TensorJson,
}

/// Extra section present in converted (spiking) checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SnnSection {
    /// Firing threshold per quant layer, in block order.
    pub th: Vec<f64>,
    /// Membrane pre-charge as a fraction of th.
    pub precharge: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: Vec<BlockSpec>,
    pub seed: u64,
    pub epoch: usize,
    pub config_hash: String,
    pub params: Vec<ParamEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub snn: Option<SnnSection>,
}

#[derive(Debug, Clone, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub config_hash: String,
}

/// Hex SHA-256 of the canonical JSON serialization of a train config.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn checkpoint_from_net(net: &QuantNet, meta: &CheckpointMeta) -> Checkpoint {
    let mut params = Vec::new();
    for (i, b) in net.blocks.iter().enumerate() {
        match b {
            Block::Affine(a) => {
                params.push(ParamEntry {
                    block: i,
                    name: "w".into(),
                    value: TensorJson::from_tensor(&a.w),
                });
                params.push(ParamEntry {
                    block: i,
                    name: "b".into(),
                    value: TensorJson::from_tensor(&a.b),
                });
            }
            Block::Quant(q) => {
                params.push(ParamEntry {
                    block: i,
                    name: "s".into(),
                    value: TensorJson::Scalar(q.s),
                });
                params.push(ParamEntry {
                    block: i,
                    name: "s_initialized".into(),
                    value: TensorJson::Scalar(if q.s_initialized() { 1.0 } else { 0.0 }),
                });
            }
            _ => {}
        }
    }
    Checkpoint {
        format_version: FORMAT_VERSION,
        arch: net.spec(),
        seed: meta.seed,
        epoch: meta.epoch,
        config_hash: meta.config_hash.clone(),
        params,
        snn: None,
    }
}

fn find_param<'a>(ckpt: &'a Checkpoint, block: usize, name: &str) -> Result<&'a TensorJson> {
    ckpt.params
        .iter()
        .find(|p| p.block == block && p.name == name)
        .map(|p| &p.value)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?} for block {block}")))
}

pub fn net_from_checkpoint(ckpt: &Checkpoint) -> Result<QuantNet> {
    if ckpt.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}, expected {FORMAT_VERSION}",
            ckpt.format_version
        )));
    }
    let mut blocks = Vec::with_capacity(ckpt.arch.len());
    for (i, spec) in ckpt.arch.iter().enumerate() {
        blocks.push(match spec {
            BlockSpec::Affine { in_dim, out_dim } => {
                let w = find_param(ckpt, i, "w")?.to_matrix("w")?;
                let b = find_param(ckpt, i, "b")?.to_vector("b")?;
                if w.shape != vec![*out_dim, *in_dim] {
                    return Err(Error::Checkpoint(format!(
                        "block {i}: weight shape {:?} does not match arch {out_dim}x{in_dim}",
                        w.shape
                    )));
                }
                Block::Affine(Affine::new(w, b)?)
            }
            BlockSpec::Quant { p, noise } => {
                let s = find_param(ckpt, i, "s")?.to_scalar("s")?;
                let init = find_param(ckpt, i, "s_initialized")?.to_scalar("s_initialized")? != 0.0;
                Block::Quant(QuantAct::with_scale(*p, *noise, s, init)?)
            }
            BlockSpec::Relu => Block::Relu(crate::layers::Relu::new()),
            BlockSpec::AvgPool { channels, in_h, in_w, window, stride } => {
                Block::Pool(crate::layers::AvgPool2d::new(
                    *channels,
                    *in_h,
                    *in_w,
                    (window[0], window[1]),
                    (stride[0], stride[1]),
                )?)
            }
        });
    }
    QuantNet::new(blocks)
}

pub fn save_checkpoint(net: &QuantNet, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let ckpt = checkpoint_from_net(net, meta);
    write_checkpoint_file(&ckpt, path)
}

pub fn write_checkpoint_file(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(ckpt)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Checkpoint(format!("{}: parse error at line {} column {}: {e}", path.display(), e.line(), e.column()))
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(QuantNet, Checkpoint)> {
    let ckpt = read_checkpoint_file(path)?;
    let net = net_from_checkpoint(&ckpt)?;
    Ok((net, ckpt))
}
