//! Dense row-major tensor of f64 values.
//!
//! Conventions used across the crate: row-major layout, batch-leading
//! dimension, 64-bit floats everywhere. Every public constructor checks that
//! the data matches the shape and that all entries are finite.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                expected: shape.clone(),
                actual: vec![data.len()],
            });
        }
        let t = Tensor { shape, data };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    /// 1-D tensor from a vector.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// 2-D tensor from rows x cols and flat row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// He-style uniform init in [-sqrt(6/fan_in), +sqrt(6/fan_in)].
    pub fn init_uniform(rows: usize, cols: usize, rng: &mut SplitMix64) -> Self {
        let bound = (6.0 / cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.next_range(-bound, bound))
            .collect();
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading dimension (batch size for activations).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing dimension for 2-D tensors.
    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn check_finite(&self, op: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }
}

/// y = W.x + b for one sample; W is [out, in], x and the result are flat rows.
/// Shared by the ANN affine layer and the SNN current propagation so both
/// paths produce bit-identical sums.
pub fn affine_matvec(w: &Tensor, b: &Tensor, x: &[f64], out: &mut [f64]) {
    let i = w.shape[1];
    debug_assert_eq!(x.len(), i);
    debug_assert_eq!(out.len(), w.shape[0]);
    for (r, out_r) in out.iter_mut().enumerate() {
        let wrow = &w.data[r * i..(r + 1) * i];
        let mut acc = 0.0;
        for (wj, xj) in wrow.iter().zip(x.iter()) {
            acc += wj * xj;
        }
        *out_r = acc + b.data[r];
    }
}
