//! Quantized-ANN to spiking-network conversion: weights and biases copy
//! verbatim, each quant layer becomes an integrate-and-fire population with
//! firing threshold th = p * s, and membrane potentials start pre-charged at
//! 0.5 * th so integrate-and-fire flooring behaves like round-to-nearest.

use crate::error::{Error, Result};
use crate::layers::AvgPool2d;
use crate::net::{Block, BlockSpec, QuantNet};
use crate::quant::QuantAct;
use crate::tensor::Tensor;

pub const PRECHARGE_FRACTION: f64 = 0.5;

/// Integrate-and-fire population converted from one quant layer.
/// `u` integrates input current; a spike is emitted when u >= th and th is
/// subtracted at the next step (reset-by-subtraction with a one-step lag).
#[derive(Debug, Clone)]
pub struct IfLayer {
    /// Source quantization ceiling.
    pub p: u32,
    /// Source quantization scale.
    pub s: f64,
    /// Source noise-adaptor flag (kept for checkpoint round trips).
    pub noise: bool,
    /// Firing threshold, exactly p * s.
    pub th: f64,
    /// Membrane potentials.
    pub u: Vec<f64>,
    /// Spikes emitted at the previous step, in {-1, 0, 1}.
    pub z_prev: Vec<f64>,
    /// Cumulative signed spike count this simulation.
    pub cum: Vec<f64>,
    /// Total input charge received this simulation (audit accumulator).
    pub charge_sum: Vec<f64>,
    /// Total signed spikes emitted this simulation (audit accumulator).
    pub spike_sum: Vec<f64>,
    /// Total spike events (nonzero emissions) this simulation.
    pub events: f64,
}

impl IfLayer {
    pub fn from_quant(q: &QuantAct, neurons: usize) -> Self {
        let th = q.p() as f64 * q.s;
        let mut layer = IfLayer {
            p: q.p(),
            s: q.s,
            noise: q.noise_enabled,
            th,
            u: vec![0.0; neurons],
            z_prev: vec![0.0; neurons],
            cum: vec![0.0; neurons],
            charge_sum: vec![0.0; neurons],
            spike_sum: vec![0.0; neurons],
            events: 0.0,
        };
        layer.reset();
        layer
    }

    /// Bare population with an explicit threshold (diagnostics and schedule
    /// experiments); bookkept as p = 1, s = th.
    pub fn single(th: f64) -> Self {
        IfLayer {
            p: 1,
            s: th,
            noise: false,
            th,
            u: vec![PRECHARGE_FRACTION * th],
            z_prev: vec![0.0],
            cum: vec![0.0],
            charge_sum: vec![0.0],
            spike_sum: vec![0.0],
            events: 0.0,
        }
    }

    pub fn neurons(&self) -> usize {
        self.u.len()
    }

    pub fn reset(&mut self) {
        self.u.fill(PRECHARGE_FRACTION * self.th);
        self.z_prev.fill(0.0);
        self.cum.fill(0.0);
        self.charge_sum.fill(0.0);
        self.spike_sum.fill(0.0);
        self.events = 0.0;
    }
}

#[derive(Debug, Clone)]
pub enum SnnBlock {
    Linear { w: Tensor, b: Tensor },
    Pool(AvgPool2d),
    If(IfLayer),
}

impl SnnBlock {
    pub fn kind(&self) -> &'static str {
        match self {
            SnnBlock::Linear { .. } => "linear",
            SnnBlock::Pool(_) => "avgpool",
            SnnBlock::If(_) => "if",
        }
    }
}

/// The converted network. Analog-coded input: the block prefix ahead of the
/// first spiking layer is applied to the raw input once per sample and
/// injected as a constant current every step. The final affine acts as a
/// non-spiking integrator accumulating its drive into `logits_acc`.
#[derive(Debug, Clone)]
pub struct SnnNet {
    pub blocks: Vec<SnnBlock>,
    pub logits_acc: Vec<f64>,
    pub steps_run: usize,
}

impl SnnNet {
    pub fn classes(&self) -> usize {
        self.logits_acc.len()
    }

    pub fn in_dim(&self) -> usize {
        match self.blocks.first() {
            Some(SnnBlock::Linear { w, .. }) => w.shape[1],
            Some(SnnBlock::Pool(p)) => p.in_dim(),
            Some(SnnBlock::If(l)) => l.neurons(),
            None => 0,
        }
    }

    pub fn if_layers(&self) -> impl Iterator<Item = &IfLayer> {
        self.blocks.iter().filter_map(|b| match b {
            SnnBlock::If(l) => Some(l),
            _ => None,
        })
    }

    pub fn num_if_layers(&self) -> usize {
        self.if_layers().count()
    }

    /// Membrane potentials back to 0.5 * th, spike memory and accumulators
    /// to zero. Idempotent.
    pub fn reset_state(&mut self) {
        for b in &mut self.blocks {
            if let SnnBlock::If(l) = b {
                l.reset();
            }
        }
        self.logits_acc.fill(0.0);
        self.steps_run = 0;
    }

    /// Reads the source quantized network back out of the converted one.
    pub fn to_source_net(&self) -> Result<QuantNet> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            blocks.push(match b {
                SnnBlock::Linear { w, b } => Block::Affine(crate::layers::Affine::new(w.clone(), b.clone())?),
                SnnBlock::Pool(p) => Block::Pool(p.clone()),
                SnnBlock::If(l) => Block::Quant(QuantAct::with_scale(l.p, l.noise, l.s, true)?),
            });
        }
        QuantNet::new(blocks)
    }

    pub fn arch(&self) -> Vec<BlockSpec> {
        self.blocks
            .iter()
            .map(|b| match b {
                SnnBlock::Linear { w, .. } => BlockSpec::Affine {
                    in_dim: w.shape[1],
                    out_dim: w.shape[0],
                },
                SnnBlock::Pool(p) => BlockSpec::AvgPool {
                    channels: p.channels,
                    in_h: p.in_h,
                    in_w: p.in_w,
                    window: [p.window.0, p.window.1],
                    stride: [p.stride.0, p.stride.1],
                },
                SnnBlock::If(l) => BlockSpec::Quant { p: l.p, noise: l.noise },
            })
            .collect()
    }
}

/// Maps a trained quantized network to spiking parameters: weights and
/// biases copied verbatim, th = p * s per quant layer, state pre-charged.
/// A hidden rectifier (or any non-quantized activation) is a conversion
/// error naming the offending block.
pub fn convert(net: &QuantNet) -> Result<SnnNet> {
    let mut blocks = Vec::with_capacity(net.blocks.len());
    let mut dim = net.in_dim();
    for (i, b) in net.blocks.iter().enumerate() {
        match b {
            Block::Affine(a) => {
                if a.in_dim() != dim {
                    return Err(Error::ShapeMismatch {
                        op: "convert",
                        expected: vec![dim],
                        actual: vec![a.in_dim()],
                    });
                }
                dim = a.out_dim();
                blocks.push(SnnBlock::Linear {
                    w: a.w.clone(),
                    b: a.b.clone(),
                });
            }
            Block::Pool(p) => {
                dim = p.out_dim();
                blocks.push(SnnBlock::Pool(p.clone()));
            }
            Block::Quant(q) => blocks.push(SnnBlock::If(IfLayer::from_quant(q, dim))),
            Block::Relu(_) => {
                return Err(Error::Unconvertible {
                    index: i,
                    kind: b.kind().to_string(),
                })
            }
        }
    }
    let classes = dim;
    let mut snn = SnnNet {
        blocks,
        logits_acc: vec![0.0; classes],
        steps_run: 0,
    };
    snn.reset_state();
    Ok(snn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn quant_net(p: u32, s: f64) -> QuantNet {
        let mut rng = SplitMix64::new(3);
        let mut net = QuantNet::mlp(&[2, 3, 2], p, false, &mut rng).unwrap();
        for b in &mut net.blocks {
            if let Block::Quant(q) = b {
                *q = QuantAct::with_scale(p, false, s, true).unwrap();
            }
        }
        net
    }

    #[test]
    fn threshold_is_exact_product() {
        for (p, s) in [(3u32, 0.5f64), (1, 1.0), (4, 0.37)] {
            let snn = convert(&quant_net(p, s)).unwrap();
            let layer = snn.if_layers().next().unwrap();
            assert_eq!(layer.th.to_bits(), (p as f64 * s).to_bits());
        }
        let snn = convert(&quant_net(3, 0.5)).unwrap();
        assert_eq!(snn.if_layers().next().unwrap().th, 1.5);
        let snn = convert(&quant_net(1, 1.0)).unwrap();
        assert_eq!(snn.if_layers().next().unwrap().th, 1.0);
    }

    #[test]
    fn weights_copy_bit_identical_and_invert() {
        let net = quant_net(2, 0.8);
        let snn = convert(&net).unwrap();
        let back = snn.to_source_net().unwrap();
        for (a, b) in net.blocks.iter().zip(back.blocks.iter()) {
            if let (Block::Affine(x), Block::Affine(y)) = (a, b) {
                let xb: Vec<u64> = x.w.data.iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.w.data.iter().map(|v| v.to_bits()).collect();
                assert_eq!(xb, yb);
                assert_eq!(x.b.data, y.b.data);
            }
        }
    }

    #[test]
    fn hidden_rectifier_rejected_with_block_index() {
        let mut rng = SplitMix64::new(4);
        let spec = vec![
            BlockSpec::Affine { in_dim: 2, out_dim: 3 },
            BlockSpec::Relu,
            BlockSpec::Affine { in_dim: 3, out_dim: 2 },
        ];
        let net = QuantNet::from_spec(&spec, &mut rng).unwrap();
        let err = convert(&net).unwrap_err();
        assert!(err.to_string().contains("block 1"), "{err}");
    }

    #[test]
    fn reset_precharges_to_half_threshold() {
        let mut snn = convert(&quant_net(3, 0.5)).unwrap();
        for l in snn.if_layers() {
            assert!(l.u.iter().all(|&u| u == 0.75));
            assert!(l.z_prev.iter().all(|&z| z == 0.0));
        }
        // idempotent
        let before: Vec<Vec<f64>> = snn.if_layers().map(|l| l.u.clone()).collect();
        snn.reset_state();
        let after: Vec<Vec<f64>> = snn.if_layers().map(|l| l.u.clone()).collect();
        assert_eq!(before, after);
    }
}
