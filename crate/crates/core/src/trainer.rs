//! Minibatch SGD with momentum, weight decay and a cosine learning-rate
//! schedule. Fully deterministic for a fixed seed: epoch shuffles derive
//! from hash(seed, epoch), noise draws from one seeded stream consumed in
//! batch order.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{argmax, softmax_cross_entropy_batch};
use crate::net::{ParamKind, QuantNet};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Quantization ceiling used when the caller builds the network.
    pub p: u32,
    /// Train with the noise adaptor enabled on every quant layer.
    pub noise_adaptor: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            lr_max: 0.1,
            lr_min: 0.0,
            weight_decay: 5e-4,
            momentum: 0.9,
            seed: 1,
            p: 2,
            noise_adaptor: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr_max >= 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min <= lr_max, got lr_min={} lr_max={}",
                self.lr_min, self.lr_max
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.p < 1 {
            return Err(Error::Config("p must be >= 1".into()));
        }
        Ok(())
    }
}

/// lr(t) = lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi t / total)).
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("cosine schedule needs total > 0".into()));
    }
    debug_assert!(t <= total);
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_acc: f64,
}

pub type History = Vec<EpochStats>;

/// Deterministic argmax accuracy on the noise-free forward path.
pub fn evaluate_ann(net: &QuantNet, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let logits = net.forward_eval(&data.features)?;
    let correct = (0..data.len())
        .filter(|&i| argmax(logits.row(i)) == data.labels[i])
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Runs shuffled minibatch SGD; history records per-epoch mean train loss
/// and eval accuracy. Aborts with the failing step index if the loss goes
/// non-finite.
pub fn train(
    net: &mut QuantNet,
    train_set: &Dataset,
    eval_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if train_set.dim() != net.in_dim() {
        return Err(Error::ShapeMismatch {
            op: "train",
            expected: vec![net.in_dim()],
            actual: vec![train_set.dim()],
        });
    }

    let n = train_set.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut noise_rng = SplitMix64::new(cfg.seed);
    let mut velocities = init_velocities(net);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = SplitMix64::new(SplitMix64::derive(cfg.seed, epoch as u64));
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (bx, by) = train_set.gather(chunk);
            net.zero_grads();
            let logits = net
                .forward_train(&bx, &mut noise_rng)
                .map_err(|e| diverged_if_nonfinite(e, step))?;
            let (loss, grad) = softmax_cross_entropy_batch(&logits, &by)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss = {loss}"),
                });
            }
            net.backward(&grad).map_err(|e| diverged_if_nonfinite(e, step))?;

            let lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min)?;
            sgd_step(net, &mut velocities, lr, cfg.momentum, cfg.weight_decay);
            net.clamp_scales();

            loss_sum += loss;
            step += 1;
        }

        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches_per_epoch as f64,
            eval_acc: evaluate_ann(net, eval_set)
                .map_err(|e| diverged_if_nonfinite(e, step.saturating_sub(1)))?,
        });
    }
    Ok(history)
}

fn diverged_if_nonfinite(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite(ctx) => Error::Diverged {
            step,
            detail: format!("non-finite value in {ctx}"),
        },
        other => other,
    }
}

fn init_velocities(net: &mut QuantNet) -> Vec<Vec<f64>> {
    let mut v = Vec::new();
    net.visit_params_mut(|_, values, _| v.push(vec![0.0; values.len()]));
    v
}

/// velocity = momentum * velocity + (grad + wd * w); w -= lr * velocity.
/// Weight decay applies to affine weights only.
fn sgd_step(
    net: &mut QuantNet,
    velocities: &mut [Vec<f64>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let mut slot = 0;
    net.visit_params_mut(|kind, values, grads| {
        let vel = &mut velocities[slot];
        slot += 1;
        let wd = if kind == ParamKind::Weight { weight_decay } else { 0.0 };
        for i in 0..values.len() {
            let g = grads[i] + wd * values[i];
            vel[i] = momentum * vel[i] + g;
            values[i] -= lr * vel[i];
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticKind, SyntheticSpec};
    use crate::net::Block;
    use crate::tensor::Tensor;

    fn blob_data(seed: u64) -> (Dataset, Dataset) {
        let spec = SyntheticSpec {
            kind: SyntheticKind::Blobs,
            n: 80,
            classes: 2,
            dim: 3,
            spread: 0.1,
            seed,
        };
        gen_synthetic(&spec).unwrap().split(0.75)
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 10, 0.1, 0.0).unwrap(), 0.1);
        assert!((cosine_lr(10, 10, 0.1, 0.0).unwrap() - 0.0).abs() < 1e-17);
        assert!((cosine_lr(5, 10, 0.1, 0.02).unwrap() - 0.06).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_total() {
        assert!(cosine_lr(0, 0, 0.1, 0.0).is_err());
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let (train_set, eval_set) = blob_data(3);
        let mut rng = SplitMix64::new(2);
        let mut net = QuantNet::mlp(&[3, 4, 2], 2, false, &mut rng).unwrap();
        let before: Vec<Vec<f64>> = net
            .blocks
            .iter()
            .filter_map(|b| match b {
                Block::Affine(a) => Some(a.w.data.clone()),
                _ => None,
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            lr_max: 0.0,
            lr_min: 0.0,
            seed: 5,
            ..Default::default()
        };
        train(&mut net, &train_set, &eval_set, &cfg).unwrap();
        let after: Vec<Vec<f64>> = net
            .blocks
            .iter()
            .filter_map(|b| match b {
                Block::Affine(a) => Some(a.w.data.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn single_step_matches_hand_gradient() {
        // one sample, one epoch, plain SGD (no momentum, no decay):
        // w' = w - lr * grad with grad computed by hand for a 1-affine net.
        // Net: logits = W x + b, 2 classes; CE grad = softmax - onehot.
        let x = vec![0.5f64, -1.0];
        let label = 0usize;
        let w0 = vec![0.2f64, 0.1, -0.3, 0.4];
        let b0 = vec![0.0f64, 0.0];
        let lr = 0.05;

        // hand forward
        let z0 = w0[0] * x[0] + w0[1] * x[1] + b0[0];
        let z1 = w0[2] * x[0] + w0[3] * x[1] + b0[1];
        let m = z0.max(z1);
        let e0 = (z0 - m).exp();
        let e1 = (z1 - m).exp();
        let p0 = e0 / (e0 + e1);
        let p1 = e1 / (e0 + e1);
        let (g0, g1) = (p0 - 1.0, p1); // label 0
        let expected_w = [
            w0[0] - lr * g0 * x[0],
            w0[1] - lr * g0 * x[1],
            w0[2] - lr * g1 * x[0],
            w0[3] - lr * g1 * x[1],
        ];
        let expected_b = [b0[0] - lr * g0, b0[1] - lr * g1];

        let affine = crate::layers::Affine::new(
            Tensor::matrix(2, 2, w0.clone()).unwrap(),
            Tensor::vector(b0.clone()),
        )
        .unwrap();
        let mut net = QuantNet::new(vec![Block::Affine(affine)]).unwrap();
        let train_set = Dataset::from_parts(
            "hand".into(),
            Tensor::matrix(1, 2, x.clone()).unwrap(),
            vec![label],
            2,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            lr_max: lr,
            lr_min: lr,
            weight_decay: 0.0,
            momentum: 0.0,
            seed: 9,
            ..Default::default()
        };
        train(&mut net, &train_set, &train_set, &cfg).unwrap();

        if let Block::Affine(a) = &net.blocks[0] {
            for (i, &expected) in expected_w.iter().enumerate() {
                assert!(
                    (a.w.data[i] - expected).abs() < 1e-15,
                    "w[{i}]: {} vs {expected}",
                    a.w.data[i]
                );
            }
            for (i, &expected) in expected_b.iter().enumerate() {
                assert!((a.b.data[i] - expected).abs() < 1e-15);
            }
        } else {
            unreachable!();
        }
    }

    #[test]
    fn weight_decay_alone_scales_weights_exactly() {
        // Zero gradient + first step: velocity = wd * w, so
        // w' = w - lr * wd * w. With lr and wd powers of two the update is
        // exact: w' = w * (1 - lr*wd) bitwise.
        let mut net = {
            let affine = crate::layers::Affine::new(
                Tensor::matrix(1, 1, vec![0.75]).unwrap(),
                Tensor::vector(vec![0.0]),
            )
            .unwrap();
            QuantNet::new(vec![Block::Affine(affine)]).unwrap()
        };
        let mut vel = init_velocities(&mut net);
        sgd_step(&mut net, &mut vel, 0.5, 0.9, 0.5);
        if let Block::Affine(a) = &net.blocks[0] {
            assert_eq!(a.w.data[0].to_bits(), (0.75f64 * (1.0 - 0.25)).to_bits());
        }
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let (train_set, eval_set) = blob_data(11);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            seed: 21,
            noise_adaptor: true,
            ..Default::default()
        };
        let run = || {
            let mut rng = SplitMix64::new(100);
            let mut net = QuantNet::mlp(&[3, 8, 2], cfg.p, cfg.noise_adaptor, &mut rng).unwrap();
            let hist = train(&mut net, &train_set, &eval_set, &cfg).unwrap();
            (hist, net)
        };
        let (h1, n1) = run();
        let (h2, n2) = run();
        for (a, b) in h1.iter().zip(h2.iter()) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.eval_acc.to_bits(), b.eval_acc.to_bits());
        }
        for (ba, bb) in n1.blocks.iter().zip(n2.blocks.iter()) {
            if let (Block::Affine(a), Block::Affine(b)) = (ba, bb) {
                assert_eq!(a.w.data, b.w.data);
            }
        }
    }

    #[test]
    fn divergence_reports_step() {
        let train_set = Dataset::from_parts(
            "big".into(),
            Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            vec![0],
            2,
        )
        .unwrap();
        let affine = crate::layers::Affine::new(
            Tensor::matrix(2, 1, vec![1e308, -1e308]).unwrap(),
            Tensor::vector(vec![1e308, 0.0]),
        )
        .unwrap();
        let mut net = QuantNet::new(vec![Block::Affine(affine)]).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            ..Default::default()
        };
        let err = train(&mut net, &train_set, &train_set, &cfg).unwrap_err();
        match err {
            Error::Diverged { step, .. } => assert_eq!(step, 0),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn evaluate_counts_by_hand() {
        // fixed net: logits = x (2 features, 2 classes); 4 hand-labeled samples
        let affine = crate::layers::Affine::new(
            Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::vector(vec![0.0, 0.0]),
        )
        .unwrap();
        let net = QuantNet::new(vec![Block::Affine(affine)]).unwrap();
        // argmax picks feature 0 vs 1; labels chosen so 3 of 4 are right
        let data = Dataset::from_parts(
            "hand".into(),
            Tensor::matrix(4, 2, vec![1., 0., 0., 1., 1., 0., 1., 0.]).unwrap(),
            vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        assert_eq!(evaluate_ann(&net, &data).unwrap(), 0.75);
    }

    #[test]
    fn constant_logits_tie_break_gives_half_on_balanced_data() {
        let affine = crate::layers::Affine::new(
            Tensor::matrix(2, 2, vec![0.0; 4]).unwrap(),
            Tensor::vector(vec![0.0, 0.0]),
        )
        .unwrap();
        let net = QuantNet::new(vec![Block::Affine(affine)]).unwrap();
        let data = Dataset::from_parts(
            "bal".into(),
            Tensor::matrix(4, 2, vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap(),
            vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        assert_eq!(evaluate_ann(&net, &data).unwrap(), 0.5);
    }
}
