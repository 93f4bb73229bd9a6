//! Built-in invariant suite. Each check is an independent pass/fail probe
//! with a one-line detail; the CLI prints one line per check and the
//! acceptance tests reuse the heavier ones at their full stated scale.

use crate::convert::convert;
use crate::data::{gen_synthetic, SyntheticKind, SyntheticSpec};
use crate::error::Result;
use crate::layers::argmax;
use crate::net::QuantNet;
use crate::quant::{quant_state, sample_noise, scale_grad_term, ste_mask, QuantAct};
use crate::rng::SplitMix64;
use crate::sim::{simulate, unevenness_demo, Correction, SimConfig};
use crate::tensor::Tensor;
use crate::trainer::{evaluate_ann, train, TrainConfig};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn ok(name: &'static str, detail: String) -> Self {
        CheckResult {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        CheckResult {
            name,
            passed: false,
            detail,
        }
    }
}

/// Bit-level sweep of the quantizer forward/backward rules against a
/// literal restatement of their piecewise closed forms, for x = v/s over
/// [-1, p+1] in steps of 0.01, p in {1..4}, eps in {-0.49,-0.25,0,0.25,0.49},
/// scales 1.0 and 0.5 (exactly invertible in binary). Ties excluded.
pub fn check_quant_grid() -> CheckResult {
    let eps_set = [-0.49, -0.25, 0.0, 0.25, 0.49];
    let mut points = 0usize;
    for p in 1u32..=4 {
        for s in [1.0f64, 0.5] {
            let steps = ((p as f64 + 2.0) / 0.01).round() as usize;
            for k in 0..=steps {
                let x = -1.0 + k as f64 * 0.01;
                for &eps in &eps_set {
                    let xe = x + eps;
                    // exclude rounding ties
                    let frac = xe - xe.floor();
                    if (frac - 0.5).abs() < 1e-9 {
                        continue;
                    }
                    // independent piecewise statement of the rules
                    let pf = p as f64;
                    let clip = if xe <= 0.0 {
                        0.0
                    } else if xe >= pf {
                        pf
                    } else {
                        xe
                    };
                    let oracle_fwd = s * clip.round();
                    let oracle_mask: f64 = if xe <= 0.0 || xe >= pf { 0.0 } else { 1.0 };
                    let oracle_sterm = if xe <= 0.0 {
                        0.0
                    } else if xe >= pf {
                        pf
                    } else {
                        -xe + xe.round()
                    };

                    // kernel level
                    let kf = s * quant_state(xe, p);
                    let km = ste_mask(xe, p);
                    let kt = scale_grad_term(xe, p);
                    if kf.to_bits() != oracle_fwd.to_bits()
                        || km.to_bits() != oracle_mask.to_bits()
                        || kt.to_bits() != oracle_sterm.to_bits()
                    {
                        return CheckResult::fail(
                            "quant-grid-closed-forms",
                            format!(
                                "kernel mismatch at p={p} s={s} x={x} eps={eps}: fwd {kf} vs {oracle_fwd}, mask {km} vs {oracle_mask}, sterm {kt} vs {oracle_sterm}"
                            ),
                        );
                    }

                    // layer path, v = x*s exact for s in {1, 0.5}
                    let v = Tensor::vector(vec![x * s]);
                    let mut layer = QuantAct::with_scale(p, true, s, true).unwrap();
                    let out = layer
                        .forward_with_eps(&v, Tensor::vector(vec![eps]))
                        .expect("forward");
                    let grad_v = layer.backward(&Tensor::vector(vec![1.0])).expect("backward");
                    if out.data[0].to_bits() != oracle_fwd.to_bits()
                        || grad_v.data[0].to_bits() != oracle_mask.to_bits()
                        || layer.grad_s.to_bits() != oracle_sterm.to_bits()
                    {
                        return CheckResult::fail(
                            "quant-grid-closed-forms",
                            format!(
                                "layer mismatch at p={p} s={s} x={x} eps={eps}: fwd {} vs {}, mask {} vs {}, sterm {} vs {}",
                                out.data[0], oracle_fwd, grad_v.data[0], oracle_mask, layer.grad_s, oracle_sterm
                            ),
                        );
                    }
                    points += 1;
                }
            }
        }
    }
    CheckResult::ok(
        "quant-grid-closed-forms",
        format!("{points} grid points bit-exact"),
    )
}

/// Noise support strictly inside (-0.5, 0.5) and Monte-Carlo mean bound.
pub fn check_noise_support(n: usize) -> CheckResult {
    let mut rng = SplitMix64::new(2024);
    let t = sample_noise(&mut rng, vec![n]);
    if let Some(bad) = t.data.iter().find(|&&e| !(-0.5 < e && e < 0.5)) {
        return CheckResult::fail("noise-support", format!("sample {bad} outside (-0.5, 0.5)"));
    }
    let mean = t.sum() / n as f64;
    let bound = 4.0 * (1.0 / 12f64.sqrt()) / (n as f64).sqrt();
    if mean.abs() > bound {
        return CheckResult::fail(
            "noise-support",
            format!("mean {mean} exceeds Monte-Carlo bound {bound}"),
        );
    }
    CheckResult::ok(
        "noise-support",
        format!("{n} samples in open interval, |mean| = {:.2e} <= {bound:.2e}", mean.abs()),
    )
}

/// Mean alignment: for `points` random v in [0, s*p], the Monte-Carlo mean
/// of the noise-path forward over `draws` draws stays within
/// 4 * (0.5 s) / sqrt(draws) of clip(v, 0, s*p).
pub fn check_unbiasedness(points: usize, draws: usize, seed: u64) -> CheckResult {
    let s = 0.8;
    let p = 3u32;
    let mut rng = SplitMix64::new(seed);
    let bound = 4.0 * (0.5 * s) / (draws as f64).sqrt();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let v = rng.next_range(0.0, s * p as f64);
        let mut layer = QuantAct::with_scale(p, true, s, true).unwrap();
        let batch = Tensor::filled(vec![draws], v);
        let out = layer.na_forward(&batch, &mut rng).expect("na_forward");
        let mean = out.sum() / draws as f64;
        let expect = layer.expected_activation(&Tensor::vector(vec![v])).data[0];
        let dev = (mean - expect).abs();
        worst = worst.max(dev);
        if dev > bound {
            return CheckResult::fail(
                "na-unbiasedness",
                format!("v = {v}: |mean - clip| = {dev:.3e} > {bound:.3e}"),
            );
        }
    }
    CheckResult::ok(
        "na-unbiasedness",
        format!("{points} points x {draws} draws, worst dev {worst:.3e} <= {bound:.3e}"),
    )
}

/// Bounded transition: over n random (v, eps), the noise path moves the
/// quantized state by exactly 0 or 1 levels.
pub fn check_bounded_transition(n: usize, seed: u64) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let p = 3u32;
    for i in 0..n {
        let v = rng.next_range(-2.0, (p as f64 + 2.0) * 1.3);
        let s = rng.next_range(0.2, 2.0);
        let eps = rng.next_centered();
        let x = v / s;
        let d = (quant_state(x + eps, p) - quant_state(x, p)).abs();
        if d != 0.0 && d != 1.0 {
            return CheckResult::fail(
                "bounded-transition",
                format!("pair {i}: v={v} s={s} eps={eps} jumped {d} states"),
            );
        }
    }
    CheckResult::ok("bounded-transition", format!("{n} pairs, zero violations"))
}

/// Transition probability equals the fractional part: for x = k + f inside
/// (0, p), the chance of landing on state k+1 is f (Monte-Carlo 4-sigma).
pub fn check_transition_probability(draws: usize, seed: u64) -> CheckResult {
    let mut rng = SplitMix64::new(seed);
    let p = 3u32;
    let cases = [(0.0f64, 0.3f64), (1.0, 0.73), (2.0, 0.27), (1.0, 0.5001), (0.0, 0.9)];
    for (k, f) in cases {
        let x = k + f;
        let mut highs = 0usize;
        for _ in 0..draws {
            let state = quant_state(x + rng.next_centered(), p);
            if state == k + 1.0 {
                highs += 1;
            }
        }
        let rate = highs as f64 / draws as f64;
        let tol = 4.0 * (f * (1.0 - f) / draws as f64).sqrt();
        if (rate - f).abs() > tol {
            return CheckResult::fail(
                "transition-probability",
                format!("x = {k}+{f}: rate {rate} vs f {f} (tol {tol:.3e})"),
            );
        }
    }
    CheckResult::ok(
        "transition-probability",
        format!("{} cases x {draws} draws within 4 sigma", cases.len()),
    )
}

/// Trains a p = 1 micro-net on blobs and requires SNN@T=1 predictions to
/// equal the deterministic quantized-ANN predictions on every test sample
/// (top-2 logit gap below 1e-9 excluded).
pub fn check_t1_p1_equivalence() -> Result<CheckResult> {
    let spec = SyntheticSpec {
        kind: SyntheticKind::Blobs,
        n: 240,
        classes: 3,
        dim: 6,
        spread: 0.35,
        seed: 41,
    };
    let (train_set, test_set) = gen_synthetic(&spec)?.split(0.75);
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 32,
        p: 1,
        noise_adaptor: true,
        seed: 11,
        ..Default::default()
    };
    let mut rng = SplitMix64::new(SplitMix64::derive(cfg.seed, 0x1517));
    let mut net = QuantNet::mlp(&[6, 16, 3], cfg.p, cfg.noise_adaptor, &mut rng)?;
    train(&mut net, &train_set, &test_set, &cfg)?;
    let ann_acc = evaluate_ann(&net, &test_set)?;

    let mut snn = convert(&net)?;
    let sim = simulate(&mut snn, &test_set, &SimConfig::new(1))?;

    let ann_logits = net.forward_eval(&test_set.features)?;
    let mut compared = 0;
    let mut excluded = 0;
    for i in 0..test_set.len() {
        let row = ann_logits.row(i);
        let mut sorted: Vec<f64> = row.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted.len() >= 2 && (sorted[0] - sorted[1]).abs() < 1e-9 {
            excluded += 1;
            continue;
        }
        compared += 1;
        let ann_pred = argmax(row);
        let snn_pred = sim.per_step_predictions[i][0];
        if ann_pred != snn_pred {
            return Ok(CheckResult::fail(
                "t1-p1-equivalence",
                format!("sample {i}: ann {ann_pred} vs snn {snn_pred}"),
            ));
        }
    }
    Ok(CheckResult::ok(
        "t1-p1-equivalence",
        format!("{compared} samples agree ({excluded} tie-excluded), ann_acc {ann_acc:.3}"),
    ))
}

/// Conservation audit on a randomized layer and on a simulated micro-net.
pub fn check_conservation() -> Result<CheckResult> {
    use crate::convert::IfLayer;
    let mut rng = SplitMix64::new(99);
    let mut layer = IfLayer::from_quant(&QuantAct::with_scale(2, false, 0.63, true)?, 100);
    let mut z = vec![0.0; 100];
    for _ in 0..64 {
        let cur: Vec<f64> = (0..100).map(|_| rng.next_range(-1.0, 1.2)).collect();
        layer.advance(&cur, Correction::None, &mut z);
    }
    let r1 = layer.conservation_residual();

    let spec = SyntheticSpec {
        kind: SyntheticKind::Blobs,
        n: 60,
        classes: 2,
        dim: 4,
        spread: 0.3,
        seed: 8,
    };
    let (train_set, test_set) = gen_synthetic(&spec)?.split(0.8);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        p: 2,
        seed: 3,
        ..Default::default()
    };
    let mut rng = SplitMix64::new(12);
    let mut net = QuantNet::mlp(&[4, 8, 2], 2, false, &mut rng)?;
    train(&mut net, &train_set, &test_set, &cfg)?;
    let mut snn = convert(&net)?;
    let sim = simulate(&mut snn, &test_set, &SimConfig::new(32))?;
    let r2 = sim.max_residual();

    let worst = r1.max(r2);
    if worst <= 1e-9 {
        Ok(CheckResult::ok(
            "conservation-audit",
            format!("max residual {worst:.2e} <= 1e-9"),
        ))
    } else {
        Ok(CheckResult::fail(
            "conservation-audit",
            format!("residual {worst:.2e} exceeds 1e-9"),
        ))
    }
}

/// The (+2, -2) spurious-spike demo and both corrections.
pub fn check_unevenness() -> CheckResult {
    let report = unevenness_demo();
    let spurious = report.cases.iter().find(|c| c.label == "(+2, -2)").unwrap();
    let ok = spurious.plain.count == 1
        && spurious.ann_state == 0
        && spurious.negative.count == 0
        && spurious.two_stage_count == 0;
    if ok {
        CheckResult::ok(
            "unevenness-demo",
            "(+2,-2): plain 1 vs ann 0; negative-spikes 0; two-stage 0".into(),
        )
    } else {
        CheckResult::fail(
            "unevenness-demo",
            format!(
                "plain {} ann {} neg {} two-stage {}",
                spurious.plain.count, spurious.ann_state, spurious.negative.count, spurious.two_stage_count
            ),
        )
    }
}

/// The full battery, desk-scale sizes. Heavier Monte-Carlo scales live in
/// the acceptance suite.
pub fn run_selftest() -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_quant_grid(),
        check_noise_support(1_000_000),
        check_unbiasedness(12, 100_000, 505),
        check_bounded_transition(200_000, 606),
        check_transition_probability(100_000, 707),
        check_t1_p1_equivalence()?,
        check_conservation()?,
        check_unevenness(),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_all_green() {
        let results = run_selftest().unwrap();
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 8);
    }
}
