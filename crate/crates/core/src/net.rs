//! Network assembly: an ordered list of blocks ending in an affine head.
//! Hidden activations are either quantized (convertible to spiking neurons)
//! or plain rectifiers (float pre-training only).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Affine, AvgPool2d, Relu};
use crate::quant::QuantAct;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Serializable architecture descriptor, one entry per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BlockSpec {
    Affine { in_dim: usize, out_dim: usize },
    Quant { p: u32, noise: bool },
    Relu,
    AvgPool { channels: usize, in_h: usize, in_w: usize, window: [usize; 2], stride: [usize; 2] },
}

#[derive(Debug, Clone)]
pub enum Block {
    Affine(Affine),
    Quant(QuantAct),
    Relu(Relu),
    Pool(AvgPool2d),
}

impl Block {
    pub fn kind(&self) -> &'static str {
        match self {
            Block::Affine(_) => "affine",
            Block::Quant(_) => "quant",
            Block::Relu(_) => "relu",
            Block::Pool(_) => "avgpool",
        }
    }

    pub fn spec(&self) -> BlockSpec {
        match self {
            Block::Affine(a) => BlockSpec::Affine { in_dim: a.in_dim(), out_dim: a.out_dim() },
            Block::Quant(q) => BlockSpec::Quant { p: q.p(), noise: q.noise_enabled },
            Block::Relu(_) => BlockSpec::Relu,
            Block::Pool(p) => BlockSpec::AvgPool {
                channels: p.channels,
                in_h: p.in_h,
                in_w: p.in_w,
                window: [p.window.0, p.window.1],
                stride: [p.stride.0, p.stride.1],
            },
        }
    }
}

/// Parameter group tag, used by the optimizer (weight decay applies to
/// affine weights only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Scale,
}

/// The quantized ANN: affine / pooling / activation blocks; the final block
/// must be affine and acts as the (non-quantized) output head.
#[derive(Debug, Clone)]
pub struct QuantNet {
    pub blocks: Vec<Block>,
}

impl QuantNet {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if !matches!(blocks.last(), Some(Block::Affine(_))) {
            return Err(Error::Config("network must end in an affine head".into()));
        }
        Ok(QuantNet { blocks })
    }

    /// Build from an architecture descriptor with seeded weight init.
    pub fn from_spec(spec: &[BlockSpec], rng: &mut SplitMix64) -> Result<Self> {
        let mut blocks = Vec::with_capacity(spec.len());
        for bs in spec {
            blocks.push(match bs {
                BlockSpec::Affine { in_dim, out_dim } => {
                    Block::Affine(Affine::init(*in_dim, *out_dim, rng))
                }
                BlockSpec::Quant { p, noise } => Block::Quant(QuantAct::new(*p, *noise)?),
                BlockSpec::Relu => Block::Relu(Relu::new()),
                BlockSpec::AvgPool { channels, in_h, in_w, window, stride } => Block::Pool(
                    AvgPool2d::new(*channels, *in_h, *in_w, (window[0], window[1]), (stride[0], stride[1]))?,
                ),
            });
        }
        QuantNet::new(blocks)
    }

    /// Fully connected net: dims = [in, hidden..., out] with a quantized
    /// activation after every hidden affine.
    pub fn mlp(dims: &[usize], p: u32, noise: bool, rng: &mut SplitMix64) -> Result<Self> {
        Self::mlp_spec(dims, Some((p, noise)), rng)
    }

    /// Fully connected float net with rectifier activations, the starting
    /// point for quantized fine-tuning.
    pub fn relu_mlp(dims: &[usize], rng: &mut SplitMix64) -> Result<Self> {
        Self::mlp_spec(dims, None, rng)
    }

    fn mlp_spec(dims: &[usize], quant: Option<(u32, bool)>, rng: &mut SplitMix64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("mlp needs at least input and output dims".into()));
        }
        let mut spec = Vec::new();
        for w in dims.windows(2).take(dims.len() - 2) {
            spec.push(BlockSpec::Affine { in_dim: w[0], out_dim: w[1] });
            spec.push(match quant {
                Some((p, noise)) => BlockSpec::Quant { p, noise },
                None => BlockSpec::Relu,
            });
        }
        let last = &dims[dims.len() - 2..];
        spec.push(BlockSpec::Affine { in_dim: last[0], out_dim: last[1] });
        QuantNet::from_spec(&spec, rng)
    }

    /// Swaps hidden activations to quantized ones for fine-tuning a
    /// pre-trained float network: rectifiers become fresh quant layers
    /// (scale initializes from the first training batch); existing quant
    /// layers are kept when they already match (p, noise) and rebuilt
    /// otherwise. Weights are untouched.
    pub fn quantize_activations(&self, p: u32, noise: bool) -> Result<QuantNet> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            blocks.push(match b {
                Block::Relu(_) => Block::Quant(QuantAct::new(p, noise)?),
                Block::Quant(q) if q.p() == p && q.noise_enabled == noise => Block::Quant(q.clone()),
                Block::Quant(_) => Block::Quant(QuantAct::new(p, noise)?),
                other => other.clone(),
            });
        }
        QuantNet::new(blocks)
    }

    pub fn spec(&self) -> Vec<BlockSpec> {
        self.blocks.iter().map(Block::spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        for b in &self.blocks {
            match b {
                Block::Affine(a) => return a.in_dim(),
                Block::Pool(p) => return p.in_dim(),
                _ => continue,
            }
        }
        0
    }

    pub fn out_dim(&self) -> usize {
        match self.blocks.last() {
            Some(Block::Affine(a)) => a.out_dim(),
            _ => 0,
        }
    }

    /// Training forward with caching; quant layers follow their noise flag.
    pub fn forward_train(&mut self, x: &Tensor, rng: &mut SplitMix64) -> Result<Tensor> {
        let mut cur = x.clone();
        for b in &mut self.blocks {
            cur = match b {
                Block::Affine(l) => l.forward(&cur)?,
                Block::Quant(q) => q.forward_train(&cur, rng)?,
                Block::Relu(r) => r.forward(&cur)?,
                Block::Pool(p) => p.forward(&cur)?,
            };
        }
        Ok(cur)
    }

    /// Deterministic inference: quant layers take the noise-free path.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for b in &self.blocks {
            cur = match b {
                Block::Affine(l) => l.infer(&cur)?,
                Block::Quant(q) => q.forward_eval(&cur)?,
                Block::Relu(r) => r.infer(&cur)?,
                Block::Pool(p) => p.apply(&cur)?,
            };
        }
        Ok(cur)
    }

    /// Surrogate inference with every quant layer replaced by its expected
    /// activation clip(v, 0, s*p). Differentiability makes this the target
    /// of the end-to-end finite-difference audit.
    pub fn forward_surrogate(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for b in &self.blocks {
            cur = match b {
                Block::Affine(l) => l.infer(&cur)?,
                Block::Quant(q) => q.expected_activation(&cur),
                Block::Relu(r) => r.infer(&cur)?,
                Block::Pool(p) => p.apply(&cur)?,
            };
        }
        Ok(cur)
    }

    /// Backward through all blocks; gradients accumulate.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut grad = grad_logits.clone();
        for b in self.blocks.iter_mut().rev() {
            grad = match b {
                Block::Affine(l) => l.backward(&grad)?,
                Block::Quant(q) => q.backward(&grad)?,
                Block::Relu(r) => r.backward(&grad)?,
                Block::Pool(p) => p.backward(&grad)?,
            };
        }
        Ok(grad)
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            match b {
                Block::Affine(l) => l.zero_grads(),
                Block::Quant(q) => q.zero_grads(),
                _ => {}
            }
        }
    }

    /// Visit every learnable parameter slice with its accumulated gradient,
    /// in deterministic block order.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(ParamKind, &mut [f64], &mut [f64])) {
        for b in &mut self.blocks {
            match b {
                Block::Affine(l) => {
                    f(ParamKind::Weight, &mut l.w.data, &mut l.grad_w.data);
                    f(ParamKind::Bias, &mut l.b.data, &mut l.grad_b.data);
                }
                Block::Quant(q) => {
                    f(
                        ParamKind::Scale,
                        std::slice::from_mut(&mut q.s),
                        std::slice::from_mut(&mut q.grad_s),
                    );
                }
                _ => {}
            }
        }
    }

    pub fn clamp_scales(&mut self) {
        for b in &mut self.blocks {
            if let Block::Quant(q) = b {
                q.clamp_scale();
            }
        }
    }
}
