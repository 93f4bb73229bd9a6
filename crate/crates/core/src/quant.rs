//! Quantized activation with a learnable scale, in two flavors:
//!
//! * deterministic: `v_hat = s * round(clip(v/s, 0, p))`
//! * noise-injected: `v_hat = s * round(clip(v/s + eps, 0, p))` with
//!   `eps ~ U(-0.5, 0.5)` sampled once per forward pass and reused by the
//!   matching backward pass.
//!
//! The backward pass is the straight-through estimator for the input and the
//! learned-step-size rule for the scale:
//!
//! * d v_hat / d v  = 1 on 0 < x < p, else 0
//! * d v_hat / d s  = 0 on x <= 0; -x + round(x) on 0 < x < p; p on x >= p
//!
//! where x stands for v/s (plus eps on the noise path). Rounding is
//! round-half-away-from-zero throughout (`f64::round`).
//!
//! Adding the noise before clip and round makes the output a stochastic state
//! that can move one level up or down, with transition probability equal to
//! the fractional part of x; the mean over eps equals `clip(v, 0, s*p)`.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Quantized state for a pre-scaled ratio x: round(clip(x, 0, p)).
/// Always an integer-valued f64 in [0, p].
#[inline]
pub fn quant_state(x: f64, p: u32) -> f64 {
    x.clamp(0.0, p as f64).round()
}

/// Straight-through pass factor: 1 inside the open clip interval, else 0.
#[inline]
pub fn ste_mask(x: f64, p: u32) -> f64 {
    if x <= 0.0 || x >= p as f64 {
        0.0
    } else {
        1.0
    }
}

/// Per-element contribution to the scale gradient.
#[inline]
pub fn scale_grad_term(x: f64, p: u32) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= p as f64 {
        p as f64
    } else {
        -x + x.round()
    }
}

/// I.i.d. uniform samples strictly inside (-0.5, 0.5).
pub fn sample_noise(rng: &mut SplitMix64, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor {
        shape,
        data: (0..n).map(|_| rng.next_centered()).collect(),
    }
}

/// Forward cache: the pre-quantization ratios x = v/s and the noise draw
/// (all zeros on the deterministic path).
#[derive(Debug, Clone)]
pub struct QuantCache {
    pub x: Tensor,
    pub eps: Tensor,
}

/// Quantized activation layer. `p` is fixed at construction; `s` is learnable
/// and clamped strictly positive after every optimizer step.
#[derive(Debug, Clone)]
pub struct QuantAct {
    pub s: f64,
    p: u32,
    pub noise_enabled: bool,
    pub grad_s: f64,
    s_initialized: bool,
    cache: Option<QuantCache>,
}

pub const SCALE_FLOOR: f64 = 1e-4;

impl QuantAct {
    pub fn new(p: u32, noise_enabled: bool) -> Result<Self> {
        if p < 1 {
            return Err(Error::Config("quant ceiling p must be >= 1".into()));
        }
        Ok(QuantAct {
            s: 1.0,
            p,
            noise_enabled,
            grad_s: 0.0,
            s_initialized: false,
            cache: None,
        })
    }

    /// Restore a layer with a known scale (checkpoint load).
    pub fn with_scale(p: u32, noise_enabled: bool, s: f64, s_initialized: bool) -> Result<Self> {
        let mut l = QuantAct::new(p, noise_enabled)?;
        if s <= 0.0 || !s.is_finite() {
            return Err(Error::InvalidState(format!("quant scale s = {s} must be > 0")));
        }
        l.s = s;
        l.s_initialized = s_initialized;
        Ok(l)
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn s_initialized(&self) -> bool {
        self.s_initialized
    }

    /// First-batch scale init, s0 = 2*mean(|v|)/sqrt(p), clamped to the floor.
    fn ensure_scale_init(&mut self, v: &Tensor) {
        if self.s_initialized {
            return;
        }
        let mean_abs = v.data.iter().map(|x| x.abs()).sum::<f64>() / v.numel().max(1) as f64;
        self.s = (2.0 * mean_abs / (self.p as f64).sqrt()).max(SCALE_FLOOR);
        self.s_initialized = true;
    }

    fn check_scale(&self) -> Result<()> {
        if self.s <= 0.0 || !self.s.is_finite() {
            Err(Error::InvalidState(format!("quant scale s = {} must be > 0", self.s)))
        } else {
            Ok(())
        }
    }

    /// Forward with an explicit noise tensor (diagnostics and closed-form
    /// tests; training paths sample eps themselves).
    pub fn forward_with_eps(&mut self, v: &Tensor, eps: Tensor) -> Result<Tensor> {
        self.check_scale()?;
        if !v.same_shape(&eps) {
            return Err(Error::ShapeMismatch {
                op: "quant_forward_with_eps",
                expected: v.shape.clone(),
                actual: eps.shape.clone(),
            });
        }
        let s = self.s;
        let x = v.map(|vi| vi / s);
        let mut out = Tensor::zeros(v.shape.clone());
        for i in 0..x.numel() {
            out.data[i] = s * quant_state(x.data[i] + eps.data[i], self.p);
        }
        self.cache = Some(QuantCache { x, eps });
        Ok(out)
    }

    /// Deterministic quantization; caches x with eps = 0.
    pub fn quant_forward(&mut self, v: &Tensor) -> Result<Tensor> {
        if self.noise_enabled {
            return Err(Error::InvalidState(
                "quant_forward called on a noise-enabled layer; use na_forward".into(),
            ));
        }
        self.ensure_scale_init(v);
        self.forward_with_eps(v, Tensor::zeros(v.shape.clone()))
    }

    /// Noise-injected quantization; samples eps and caches (x, eps).
    pub fn na_forward(&mut self, v: &Tensor, rng: &mut SplitMix64) -> Result<Tensor> {
        if !self.noise_enabled {
            return Err(Error::InvalidState(
                "na_forward called on a layer without the noise adaptor".into(),
            ));
        }
        self.ensure_scale_init(v);
        let eps = sample_noise(rng, v.shape.clone());
        self.forward_with_eps(v, eps)
    }

    /// Training forward, dispatching on the noise flag.
    pub fn forward_train(&mut self, v: &Tensor, rng: &mut SplitMix64) -> Result<Tensor> {
        if self.noise_enabled {
            self.na_forward(v, rng)
        } else {
            self.quant_forward(v)
        }
    }

    /// Evaluation forward: always the deterministic path, no cache mutation.
    pub fn forward_eval(&self, v: &Tensor) -> Result<Tensor> {
        self.check_scale()?;
        let s = self.s;
        let p = self.p;
        Ok(v.map(|vi| s * quant_state(vi / s, p)))
    }

    /// STE input gradient plus accumulated scale gradient. Both paths share
    /// this: the deterministic forward cached eps = 0, so the x + eps branch
    /// rules reduce to the plain ones.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(Error::BackwardWithoutForward { layer: "quant" })?;
        if !grad_out.same_shape(&cache.x) {
            return Err(Error::ShapeMismatch {
                op: "quant_backward",
                expected: cache.x.shape.clone(),
                actual: grad_out.shape.clone(),
            });
        }
        let mut grad_v = Tensor::zeros(grad_out.shape.clone());
        for i in 0..grad_out.numel() {
            let xe = cache.x.data[i] + cache.eps.data[i];
            grad_v.data[i] = grad_out.data[i] * ste_mask(xe, self.p);
            self.grad_s += grad_out.data[i] * scale_grad_term(xe, self.p);
        }
        Ok(grad_v)
    }

    /// Analytic mean of the noise path over eps: clip(v, 0, s*p).
    /// Used by tests, diagnostics and the rectified surrogate network.
    pub fn expected_activation(&self, v: &Tensor) -> Tensor {
        let hi = self.s * self.p as f64;
        v.map(|vi| vi.clamp(0.0, hi))
    }

    pub fn zero_grads(&mut self) {
        self.grad_s = 0.0;
    }

    pub fn clamp_scale(&mut self) {
        if self.s < SCALE_FLOOR {
            self.s = SCALE_FLOOR;
        }
    }
}
