//! Affine, average-pooling and rectifier layers with manual forward/backward
//! passes, plus softmax cross-entropy. No autodiff graph: each layer caches
//! what its own backward pass needs, and gradients accumulate until
//! `zero_grads` is called.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{affine_matvec, Tensor};

/// Fully connected layer, weights [out, in], bias [out].
#[derive(Debug, Clone)]
pub struct Affine {
    pub w: Tensor,
    pub b: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
    cached_input: Option<Tensor>,
}

impl Affine {
    pub fn new(w: Tensor, b: Tensor) -> Result<Self> {
        if w.shape.len() != 2 || b.shape.len() != 1 || b.shape[0] != w.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "Affine::new",
                expected: vec![w.shape[0]],
                actual: b.shape.clone(),
            });
        }
        let grad_w = Tensor::zeros(w.shape.clone());
        let grad_b = Tensor::zeros(b.shape.clone());
        Ok(Affine {
            w,
            b,
            grad_w,
            grad_b,
            cached_input: None,
        })
    }

    pub fn init(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        Affine {
            w: Tensor::init_uniform(out_dim, in_dim, rng),
            b: Tensor::zeros(vec![out_dim]),
            grad_w: Tensor::zeros(vec![out_dim, in_dim]),
            grad_b: Tensor::zeros(vec![out_dim]),
            cached_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[0]
    }

    fn apply(&self, x: &Tensor, op: &'static str) -> Result<Tensor> {
        if x.shape.len() != 2 || x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op,
                expected: vec![x.rows(), self.in_dim()],
                actual: x.shape.clone(),
            });
        }
        let (batch, o) = (x.rows(), self.out_dim());
        let mut out = Tensor::zeros(vec![batch, o]);
        for s in 0..batch {
            affine_matvec(&self.w, &self.b, x.row(s), &mut out.data[s * o..(s + 1) * o]);
        }
        out.check_finite(op)?;
        Ok(out)
    }

    /// Training forward: computes W.x + b per sample and caches x.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.apply(x, "affine_forward")?;
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    /// Inference forward: no caching, usable through &self.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, "affine_infer")
    }

    /// Accumulates grad_w / grad_b and returns grad wrt the input.
    /// Consumes the cached input.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cached_input
            .take()
            .ok_or(Error::BackwardWithoutForward { layer: "affine" })?;
        let (batch, o, i) = (x.rows(), self.out_dim(), self.in_dim());
        if grad_out.shape != vec![batch, o] {
            return Err(Error::ShapeMismatch {
                op: "affine_backward",
                expected: vec![batch, o],
                actual: grad_out.shape.clone(),
            });
        }
        let mut grad_in = Tensor::zeros(vec![batch, i]);
        for s in 0..batch {
            let g = grad_out.row(s);
            let xr = x.row(s);
            for (r, &gr) in g.iter().enumerate().take(o) {
                self.grad_b.data[r] += gr;
                let wrow = &self.w.data[r * i..(r + 1) * i];
                let gwrow = &mut self.grad_w.data[r * i..(r + 1) * i];
                let girow = &mut grad_in.data[s * i..(s + 1) * i];
                for c in 0..i {
                    gwrow[c] += gr * xr[c];
                    girow[c] += gr * wrow[c];
                }
            }
        }
        Ok(grad_in)
    }

    pub fn zero_grads(&mut self) {
        self.grad_w.fill(0.0);
        self.grad_b.fill(0.0);
    }
}

/// 2-D average pooling over a flat [batch, channels*h*w] activation.
/// Window and stride must tile the spatial dims exactly.
#[derive(Debug, Clone)]
pub struct AvgPool2d {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub window: (usize, usize),
    pub stride: (usize, usize),
    cached_batch: Option<usize>,
}

impl AvgPool2d {
    pub fn new(
        channels: usize,
        in_h: usize,
        in_w: usize,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Self> {
        let ok = window.0 >= 1
            && window.1 >= 1
            && stride.0 >= 1
            && stride.1 >= 1
            && in_h >= window.0
            && in_w >= window.1
            && (in_h - window.0).is_multiple_of(stride.0)
            && (in_w - window.1).is_multiple_of(stride.1);
        if !ok {
            return Err(Error::Config(format!(
                "avgpool window {:?} / stride {:?} does not tile input {}x{}",
                window, stride, in_h, in_w
            )));
        }
        Ok(AvgPool2d {
            channels,
            in_h,
            in_w,
            window,
            stride,
            cached_batch: None,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.in_h - self.window.0) / self.stride.0 + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.window.1) / self.stride.1 + 1
    }

    pub fn in_dim(&self) -> usize {
        self.channels * self.in_h * self.in_w
    }

    pub fn out_dim(&self) -> usize {
        self.channels * self.out_h() * self.out_w()
    }

    /// Window means. Pure in the input; caching only records the batch size.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape.len() != 2 || x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "avgpool_forward",
                expected: vec![x.rows(), self.in_dim()],
                actual: x.shape.clone(),
            });
        }
        let (batch, oh, ow) = (x.rows(), self.out_h(), self.out_w());
        let area = (self.window.0 * self.window.1) as f64;
        let mut out = Tensor::zeros(vec![batch, self.out_dim()]);
        for s in 0..batch {
            for c in 0..self.channels {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for di in 0..self.window.0 {
                            for dj in 0..self.window.1 {
                                let r = i * self.stride.0 + di;
                                let q = j * self.stride.1 + dj;
                                acc += x.data
                                    [s * self.in_dim() + c * self.in_h * self.in_w + r * self.in_w + q];
                            }
                        }
                        out.data[s * self.out_dim() + c * oh * ow + i * ow + j] = acc / area;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.apply(x)?;
        self.cached_batch = Some(x.rows());
        Ok(out)
    }

    /// Distributes each output gradient uniformly: 1/(window area) per cell.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let batch = self
            .cached_batch
            .take()
            .ok_or(Error::BackwardWithoutForward { layer: "avgpool" })?;
        if grad_out.shape != vec![batch, self.out_dim()] {
            return Err(Error::ShapeMismatch {
                op: "avgpool_backward",
                expected: vec![batch, self.out_dim()],
                actual: grad_out.shape.clone(),
            });
        }
        let (oh, ow) = (self.out_h(), self.out_w());
        let area = (self.window.0 * self.window.1) as f64;
        let mut grad_in = Tensor::zeros(vec![batch, self.in_dim()]);
        for s in 0..batch {
            for c in 0..self.channels {
                for i in 0..oh {
                    for j in 0..ow {
                        let g = grad_out.data[s * self.out_dim() + c * oh * ow + i * ow + j] / area;
                        for di in 0..self.window.0 {
                            for dj in 0..self.window.1 {
                                let r = i * self.stride.0 + di;
                                let q = j * self.stride.1 + dj;
                                grad_in.data[s * self.in_dim()
                                    + c * self.in_h * self.in_w
                                    + r * self.in_w
                                    + q] += g;
                            }
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

/// Plain rectifier, used for float pre-training before quantized fine-tuning.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    cached_mask: Option<Vec<f64>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { cached_mask: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.cached_mask = Some(x.data.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect());
        Ok(x.map(|v| v.max(0.0)))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.map(|v| v.max(0.0)))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .cached_mask
            .take()
            .ok_or(Error::BackwardWithoutForward { layer: "relu" })?;
        if mask.len() != grad_out.numel() {
            return Err(Error::ShapeMismatch {
                op: "relu_backward",
                expected: vec![mask.len()],
                actual: grad_out.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: grad_out.shape.clone(),
            data: grad_out
                .data
                .iter()
                .zip(mask.iter())
                .map(|(g, m)| g * m)
                .collect(),
        })
    }
}

/// Softmax cross-entropy for a single sample. Returns the loss and the
/// gradient wrt the logits (softmax minus one-hot). Max-subtracted for
/// numerical stability.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (logits[label] - m);
    let mut grad: Vec<f64> = exps.iter().map(|&e| e / z).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Batch mean loss and mean-scaled logit gradient.
pub fn softmax_cross_entropy_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let batch = logits.rows();
    if labels.len() != batch {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy_batch",
            expected: vec![batch],
            actual: vec![labels.len()],
        });
    }
    let classes = logits.cols();
    let mut total = 0.0;
    let mut grad = Tensor::zeros(vec![batch, classes]);
    for (s, &label) in labels.iter().enumerate() {
        let (loss, g) = softmax_cross_entropy(logits.row(s), label)?;
        total += loss;
        for (c, gv) in g.iter().enumerate() {
            grad.data[s * classes + c] = gv / batch as f64;
        }
    }
    Ok((total / batch as f64, grad))
}

/// Index of the row maximum; first index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
