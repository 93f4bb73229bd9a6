//! Dataset ingestion: IDX binary files (the de-facto MNIST format) and
//! deterministic synthetic generators for dependency-free runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Labeled features, one row per sample, values in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn from_parts(
        name: String,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.shape.len() != 2 || features.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "Dataset::from_parts",
                expected: vec![labels.len()],
                actual: features.shape.clone(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            name,
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Splits off the first `frac` of samples (in stored order) as the
    /// training set, the remainder as the eval set.
    pub fn split(self, frac: f64) -> (Dataset, Dataset) {
        let cut = ((self.len() as f64) * frac).round() as usize;
        let cut = cut.min(self.len());
        let d = self.dim();
        let (fa, fb) = self.features.data.split_at(cut * d);
        let (la, lb) = self.labels.split_at(cut);
        (
            Dataset {
                name: format!("{}-train", self.name),
                features: Tensor {
                    shape: vec![cut, d],
                    data: fa.to_vec(),
                },
                labels: la.to_vec(),
                num_classes: self.num_classes,
            },
            Dataset {
                name: format!("{}-eval", self.name),
                features: Tensor {
                    shape: vec![self.labels.len() - cut, d],
                    data: fb.to_vec(),
                },
                labels: lb.to_vec(),
                num_classes: self.num_classes,
            },
        )
    }

    /// Keeps the first n samples.
    pub fn take(mut self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let d = self.dim();
        self.features.data.truncate(n * d);
        self.features.shape = vec![n, d];
        self.labels.truncate(n);
        self
    }

    /// Gathers rows into a batch tensor plus labels (minibatch assembly).
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        (
            Tensor {
                shape: vec![indices.len(), d],
                data,
            },
            labels,
        )
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::IdxParse {
            offset,
            msg: format!("need 4 bytes, file has {}", bytes.len()),
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Parses an IDX image file (magic 0x00000803): big-endian dims, unsigned
/// byte pixels scaled to [0, 1].
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let magic = read_be_u32(&bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxParse {
            offset: 0,
            msg: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_be_u32(&bytes, 4)? as usize;
    let rows = read_be_u32(&bytes, 8)? as usize;
    let cols = read_be_u32(&bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::IdxParse {
            offset: bytes.len().min(expected),
            msg: format!("expected {expected} bytes, file has {}", bytes.len()),
        });
    }
    let data = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor {
        shape: vec![n, rows * cols],
        data,
    })
}

/// Parses an IDX label file (magic 0x00000801).
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path)?;
    let magic = read_be_u32(&bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxParse {
            offset: 0,
            msg: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = read_be_u32(&bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(Error::IdxParse {
            offset: bytes.len().min(expected),
            msg: format!("expected {expected} bytes, file has {}", bytes.len()),
        });
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair into a dataset.
pub fn load_idx(images: &Path, labels: &Path, name: &str) -> Result<Dataset> {
    let features = load_idx_images(images)?;
    let labels = load_idx_labels(labels)?;
    let num_classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::from_parts(name.to_string(), features, labels, num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Blobs,
    Spirals,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub classes: usize,
    /// Feature dimension (blobs only; spirals are 2-D).
    pub dim: usize,
    /// Gaussian jitter around centers / spiral arms.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Blobs that are linearly separable at the default spread.
    fn default() -> Self {
        SyntheticSpec {
            kind: SyntheticKind::Blobs,
            n: 1000,
            classes: 4,
            dim: 8,
            spread: 0.3,
            seed: 1,
        }
    }
}

/// Deterministic labeled point clouds. Class sizes are exactly balanced up
/// to remainder (sample i has class i mod classes before shuffling).
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.n < spec.classes {
        return Err(Error::Config(format!(
            "need n >= classes >= 1, got n={} classes={}",
            spec.n, spec.classes
        )));
    }
    match spec.kind {
        SyntheticKind::Blobs => gen_blobs(spec),
        SyntheticKind::Spirals => gen_spirals(spec),
    }
}

/// Gaussian blobs around per-class centers drawn uniformly in [-2, 2]^dim,
/// linearly separable at the default spread. Features map into [0, 1] with
/// the fixed affine (x + 4) / 8, clamped.
fn gen_blobs(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.dim == 0 {
        return Err(Error::Config("blobs need dim >= 1".into()));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.dim).map(|_| rng.next_range(-2.0, 2.0)).collect())
        .collect();
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    rng.shuffle(&mut labels);
    let mut data = Vec::with_capacity(spec.n * spec.dim);
    for &c in &labels {
        for &center in &centers[c] {
            let raw = center + spec.spread * rng.next_normal();
            data.push(((raw + 4.0) / 8.0).clamp(0.0, 1.0));
        }
    }
    Dataset::from_parts(
        "blobs".into(),
        Tensor {
            shape: vec![spec.n, spec.dim],
            data,
        },
        labels,
        spec.classes,
    )
}

/// Interleaved Archimedean spiral arms in the unit square, one arm per class.
fn gen_spirals(spec: &SyntheticSpec) -> Result<Dataset> {
    let mut rng = SplitMix64::new(spec.seed);
    let per_class = spec.n / spec.classes;
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    // per-class position along the arm, assigned before shuffling
    let mut arm_index = vec![0usize; spec.classes];
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(spec.n);
    for &c in &labels {
        let k = arm_index[c];
        arm_index[c] += 1;
        let frac = if per_class > 1 {
            k as f64 / (per_class.max(2) - 1) as f64
        } else {
            0.0
        };
        let r = 0.05 + 0.45 * frac;
        let theta = 3.0 * std::f64::consts::PI * frac
            + 2.0 * std::f64::consts::PI * c as f64 / spec.classes as f64;
        let x = 0.5 + r * theta.cos() + spec.spread * rng.next_normal();
        let y = 0.5 + r * theta.sin() + spec.spread * rng.next_normal();
        points.push((x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)));
    }
    // shuffle samples, keeping (point, label) pairs together
    let mut order: Vec<usize> = (0..spec.n).collect();
    rng.shuffle(&mut order);
    let data: Vec<f64> = order.iter().flat_map(|&i| [points[i].0, points[i].1]).collect();
    labels = order.iter().map(|&i| labels[i]).collect();
    Dataset::from_parts(
        "spirals".into(),
        Tensor {
            shape: vec![spec.n, 2],
            data,
        },
        labels,
        spec.classes,
    )
}
