//! Time-stepped integrate-and-fire simulation with analog input coding,
//! per-step readout, charge-conservation auditing, and two optional
//! noise-correction modes (negative spikes, two-stage offset).
//!
//! Membrane update per hidden layer and step:
//!
//! ```text
//! u <- u + input_current - z_prev * th      (reset lags one step)
//! z  = 1 if u >= th                          (0 otherwise)
//! ```
//!
//! Outgoing spikes are weighted by the emitting layer's own threshold when
//! injected downstream. The output head never spikes; it accumulates its
//! affine drive every step and predictions read the accumulated logits.

use serde::{Deserialize, Serialize};

use crate::convert::{IfLayer, SnnBlock, SnnNet, PRECHARGE_FRACTION};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::argmax;
use crate::tensor::{affine_matvec, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correction {
    None,
    NegativeSpikes,
    TwoStageOffset,
}

impl std::fmt::Display for Correction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Correction::None => "none",
            Correction::NegativeSpikes => "negative-spikes",
            Correction::TwoStageOffset => "two-stage-offset",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Correction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Correction::None),
            "negative-spikes" => Ok(Correction::NegativeSpikes),
            "two-stage-offset" => Ok(Correction::TwoStageOffset),
            other => Err(Error::Config(format!("unknown correction mode {other:?}"))),
        }
    }
}

/// Per-step prediction readout: accumulated logits (default) or the
/// instantaneous drive of the current step only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    Accumulated,
    Instantaneous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_steps: usize,
    pub correction: Correction,
    pub record_trace: bool,
    pub readout: Readout,
}

impl SimConfig {
    pub fn new(t_steps: usize) -> Self {
        SimConfig {
            t_steps,
            correction: Correction::None,
            record_trace: false,
            readout: Readout::Accumulated,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::Config("simulation needs T >= 1".into()));
        }
        Ok(())
    }
}

/// One trace record: membrane, spike and input current of one neuron at one
/// step. Only emitted when `record_trace` is on.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub sample: usize,
    pub layer: usize,
    pub neuron: usize,
    pub t: usize,
    pub u: f64,
    pub z: f64,
    pub input_current: f64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub t_steps: usize,
    pub samples: usize,
    pub correction: Correction,
    /// Fraction correct at each step, under the configured readout.
    pub per_step_accuracy: Vec<f64>,
    /// Predicted class per sample per step.
    pub per_step_predictions: Vec<Vec<usize>>,
    /// Total spike events per hidden layer, summed over the batch.
    pub per_layer_spikes: Vec<f64>,
    /// Cumulative spike events per sample, by step (energy-vs-latency curve).
    pub per_step_spikes_per_sample: Vec<f64>,
    /// Max abs conservation residual per hidden layer over the batch.
    pub conservation_residuals: Vec<f64>,
    /// Accumulated logits per sample per step (record_trace only).
    pub per_step_logits: Option<Vec<Vec<Vec<f64>>>>,
    pub trace: Option<Vec<TraceRow>>,
}

impl SimResult {
    pub fn max_residual(&self) -> f64 {
        self.conservation_residuals.iter().cloned().fold(0.0, f64::max)
    }

    /// Accuracy after `t` steps (1-based).
    pub fn accuracy_at(&self, t: usize) -> Option<f64> {
        self.per_step_accuracy.get(t - 1).copied()
    }

    pub fn spikes_per_sample_at(&self, t: usize) -> Option<f64> {
        self.per_step_spikes_per_sample.get(t - 1).copied()
    }
}

impl IfLayer {
    /// One membrane update for the whole population. Writes spikes into
    /// `z_out` (reused buffer), returns the number of spike events.
    pub fn advance(&mut self, current: &[f64], mode: Correction, z_out: &mut [f64]) -> f64 {
        debug_assert_eq!(current.len(), self.neurons());
        let th = self.th;
        let mut events = 0.0;
        for i in 0..self.u.len() {
            self.u[i] += current[i] - self.z_prev[i] * th;
            self.charge_sum[i] += current[i];
            let z = if self.u[i] >= th {
                1.0
            } else if mode == Correction::NegativeSpikes && self.u[i] < 0.0 && self.cum[i] > 0.0 {
                -1.0
            } else {
                0.0
            };
            self.cum[i] += z;
            self.spike_sum[i] += z;
            self.z_prev[i] = z;
            z_out[i] = z;
            if z != 0.0 {
                events += 1.0;
            }
        }
        self.events += events;
        events
    }

    /// Telescoped membrane-equation residual over the simulation so far:
    /// |u_T - u_0 - total charge + th * spikes(t <= T-1)|, max over neurons.
    /// The final step's spike has not been reset-subtracted yet, hence the
    /// z_prev correction.
    pub fn conservation_residual(&self) -> f64 {
        let u0 = PRECHARGE_FRACTION * self.th;
        let mut worst = 0.0f64;
        for i in 0..self.u.len() {
            let r = self.u[i] - u0 - self.charge_sum[i]
                + self.th * (self.spike_sum[i] - self.z_prev[i]);
            worst = worst.max(r.abs());
        }
        worst
    }
}

/// Ideal spike count for total input charge `c` over `t` steps with the
/// standard 0.5 th pre-charge: clip(floor((0.5 th + c) / th), 0, t).
pub fn ideal_count(th: f64, c: f64, t: usize) -> i64 {
    let k = ((PRECHARGE_FRACTION * th + c) / th).floor();
    (k.max(0.0).min(t as f64)) as i64
}

/// Output of one simulation step.
#[derive(Debug, Clone)]
pub struct StepOut {
    /// Head drive of this step alone.
    pub instant: Vec<f64>,
    /// Head drive accumulated since reset.
    pub accumulated: Vec<f64>,
    /// Spike events across hidden layers this step.
    pub events: f64,
}

/// A single-sample simulation pass. Construction resets the network state
/// and fixes the step budget; stepping past it is an error, which prevents
/// running a new sample on stale state.
pub struct SimSession<'a> {
    snn: &'a mut SnnNet,
    /// Constant analog drive: the linear prefix ahead of the first spiking
    /// layer applied to the input once.
    pre: Vec<f64>,
    /// Index of the first block after the analog prefix.
    first_dyn: usize,
    t_max: usize,
    mode: Correction,
    record: bool,
    sample_index: usize,
    trace: Vec<TraceRow>,
    scratch: Vec<f64>,
}

impl SnnNet {
    /// Starts a fresh pass over one sample (resets all state).
    pub fn begin<'a>(
        &'a mut self,
        x: &[f64],
        cfg: &SimConfig,
        sample_index: usize,
    ) -> Result<SimSession<'a>> {
        cfg.validate()?;
        if x.len() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "sim_begin",
                expected: vec![self.in_dim()],
                actual: vec![x.len()],
            });
        }
        self.reset_state();
        // analog prefix: everything before the first spiking layer is
        // linear and time-invariant, so fold it once
        let mut pre = x.to_vec();
        let mut first_dyn = self.blocks.len();
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                SnnBlock::If(_) => {
                    first_dyn = i;
                    break;
                }
                _ => pre = apply_linear_block(b, &pre)?,
            }
        }
        let scratch_len = self
            .blocks
            .iter()
            .map(|b| match b {
                SnnBlock::If(l) => l.neurons(),
                SnnBlock::Linear { w, .. } => w.shape[0],
                SnnBlock::Pool(p) => p.out_dim(),
            })
            .max()
            .unwrap_or(0);
        Ok(SimSession {
            snn: self,
            pre,
            first_dyn,
            t_max: cfg.t_steps,
            mode: cfg.correction,
            record: cfg.record_trace,
            sample_index,
            trace: Vec::new(),
            scratch: vec![0.0; scratch_len],
        })
    }
}

fn apply_linear_block(b: &SnnBlock, x: &[f64]) -> Result<Vec<f64>> {
    match b {
        SnnBlock::Linear { w, b } => {
            if x.len() != w.shape[1] {
                return Err(Error::ShapeMismatch {
                    op: "snn_linear",
                    expected: vec![w.shape[1]],
                    actual: vec![x.len()],
                });
            }
            let mut out = vec![0.0; w.shape[0]];
            affine_matvec(w, b, x, &mut out);
            Ok(out)
        }
        SnnBlock::Pool(p) => {
            let t = Tensor {
                shape: vec![1, x.len()],
                data: x.to_vec(),
            };
            Ok(p.apply(&t)?.data)
        }
        SnnBlock::If(_) => unreachable!("apply_linear_block on spiking layer"),
    }
}

impl SimSession<'_> {
    /// Advances every layer one step and accumulates the head drive.
    pub fn step(&mut self) -> Result<StepOut> {
        if self.snn.steps_run >= self.t_max {
            return Err(Error::Session(format!(
                "step {} exceeds the session budget T = {}; begin a new session",
                self.snn.steps_run + 1,
                self.t_max
            )));
        }
        let t = self.snn.steps_run; // 0-based internal step index
        let mut cur = self.pre.clone();
        let mut events = 0.0;
        let mut layer_idx = 0usize;
        for bi in self.first_dyn..self.snn.blocks.len() {
            match &mut self.snn.blocks[bi] {
                SnnBlock::If(l) => {
                    let n = l.neurons();
                    if cur.len() != n {
                        return Err(Error::ShapeMismatch {
                            op: "snn_step",
                            expected: vec![n],
                            actual: vec![cur.len()],
                        });
                    }
                    let inputs = if self.record { cur.clone() } else { Vec::new() };
                    let z = &mut self.scratch[..n];
                    events += l.advance(&cur, self.mode, z);
                    if self.record {
                        for i in 0..n {
                            self.trace.push(TraceRow {
                                sample: self.sample_index,
                                layer: layer_idx,
                                neuron: i,
                                t: t + 1,
                                u: l.u[i],
                                z: z[i],
                                input_current: inputs[i],
                            });
                        }
                    }
                    // outgoing spikes carry this layer's own threshold
                    let th = l.th;
                    cur.clear();
                    cur.extend(z.iter().map(|&zi| zi * th));
                    layer_idx += 1;
                }
                b => {
                    cur = apply_linear_block(b, &cur)?;
                }
            }
        }
        if cur.len() != self.snn.logits_acc.len() {
            return Err(Error::ShapeMismatch {
                op: "snn_head",
                expected: vec![self.snn.logits_acc.len()],
                actual: vec![cur.len()],
            });
        }
        for (acc, v) in self.snn.logits_acc.iter_mut().zip(cur.iter()) {
            *acc += v;
        }
        self.snn.steps_run += 1;
        Ok(StepOut {
            accumulated: self.snn.logits_acc.clone(),
            instant: cur,
            events,
        })
    }

    /// Per-hidden-layer conservation residuals for the steps run so far.
    pub fn residuals(&self) -> Vec<f64> {
        self.snn.if_layers().map(IfLayer::conservation_residual).collect()
    }

    /// Spike events per hidden layer so far.
    pub fn events_per_layer(&self) -> Vec<f64> {
        self.snn.if_layers().map(|l| l.events).collect()
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        std::mem::take(&mut self.trace)
    }
}

/// Runs the full batch: per sample reset, T steps, per-step readout;
/// aggregates accuracy, spike counts and conservation residuals.
/// The two-stage mode is handled by [`two_stage_offset`]; passing it here
/// runs plain dynamics (that is stage 1).
pub fn simulate(snn: &mut SnnNet, data: &Dataset, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let dyn_mode = match cfg.correction {
        Correction::NegativeSpikes => Correction::NegativeSpikes,
        _ => Correction::None,
    };
    let run_cfg = SimConfig {
        correction: dyn_mode,
        ..cfg.clone()
    };
    let samples = data.len();
    let t_steps = cfg.t_steps;
    let num_layers = snn.num_if_layers();

    let mut per_step_predictions = Vec::with_capacity(samples);
    let mut per_step_correct = vec![0usize; t_steps];
    let mut per_layer_spikes = vec![0.0; num_layers];
    let mut per_step_events = vec![0.0; t_steps];
    let mut residuals = vec![0.0f64; num_layers];
    let mut all_logits = if cfg.record_trace { Some(Vec::with_capacity(samples)) } else { None };
    let mut all_trace = if cfg.record_trace { Some(Vec::new()) } else { None };

    for si in 0..samples {
        let x = data.features.row(si).to_vec();
        let mut sess = snn.begin(&x, &run_cfg, si)?;
        let mut preds = Vec::with_capacity(t_steps);
        let mut sample_logits = if cfg.record_trace { Some(Vec::with_capacity(t_steps)) } else { None };
        let mut events_so_far = 0.0;
        for t in 0..t_steps {
            let out = sess.step()?;
            let logits = match cfg.readout {
                Readout::Accumulated => &out.accumulated,
                Readout::Instantaneous => &out.instant,
            };
            let pred = argmax(logits);
            preds.push(pred);
            if pred == data.labels[si] {
                per_step_correct[t] += 1;
            }
            events_so_far += out.events;
            per_step_events[t] += events_so_far;
            if let Some(sl) = &mut sample_logits {
                sl.push(out.accumulated.clone());
            }
        }
        for (acc, r) in residuals.iter_mut().zip(sess.residuals()) {
            *acc = acc.max(r);
        }
        for (acc, e) in per_layer_spikes.iter_mut().zip(sess.events_per_layer()) {
            *acc += e;
        }
        if let Some(tr) = &mut all_trace {
            tr.extend(sess.take_trace());
        }
        if let (Some(all), Some(sl)) = (&mut all_logits, sample_logits) {
            all.push(sl);
        }
        per_step_predictions.push(preds);
    }

    Ok(SimResult {
        t_steps,
        samples,
        correction: cfg.correction,
        per_step_accuracy: per_step_correct
            .iter()
            .map(|&c| if samples == 0 { 0.0 } else { c as f64 / samples as f64 })
            .collect(),
        per_step_predictions,
        per_layer_spikes,
        per_step_spikes_per_sample: per_step_events
            .iter()
            .map(|&e| if samples == 0 { 0.0 } else { e / samples as f64 })
            .collect(),
        conservation_residuals: residuals,
        per_step_logits: all_logits,
        trace: all_trace,
    })
}

/// Rate-ideal readout after `t` steps: layer by layer from the input,
/// replace each hidden layer's spike count with
/// clip(floor((0.5 th + C) / th), 0, t) where C is the accumulated charge
/// implied by the corrected upstream counts; replay the head on the result.
/// Returns (logits, total corrected count).
fn rate_ideal_logits(snn: &SnnNet, x: &[f64], t: usize) -> Result<(Vec<f64>, f64)> {
    // charge accumulated over t steps through the analog prefix
    let mut first = true;
    let mut charge = x.to_vec();
    let mut total_count = 0.0;
    for b in &snn.blocks {
        match b {
            SnnBlock::If(l) => {
                if first {
                    // raw input charge accrues t times
                    charge.iter_mut().for_each(|c| *c *= t as f64);
                    first = false;
                }
                let mut counts = vec![0.0; l.neurons()];
                for i in 0..l.neurons() {
                    counts[i] = ideal_count(l.th, charge[i], t) as f64;
                    total_count += counts[i];
                }
                // corrected outgoing charge: count * th per upstream neuron
                charge = counts.iter().map(|&k| k * l.th).collect();
            }
            SnnBlock::Linear { w, b } => {
                if first {
                    // prefix applies to the raw input; charge = t * (Wx + b)
                    let mut out = vec![0.0; w.shape[0]];
                    affine_matvec(w, b, &charge, &mut out);
                    charge = out;
                } else {
                    // downstream of spikes: W * charge + t * bias
                    let mut out = vec![0.0; w.shape[0]];
                    let zero_b = Tensor::zeros(vec![w.shape[0]]);
                    affine_matvec(w, &zero_b, &charge, &mut out);
                    for (o, bi) in out.iter_mut().zip(b.data.iter()) {
                        *o += t as f64 * bi;
                    }
                    charge = out;
                }
            }
            SnnBlock::Pool(_) => {
                charge = apply_linear_block(b, &charge)?;
            }
        }
    }
    if first {
        // no spiking layer at all: head drive accrues t times
        charge.iter_mut().for_each(|c| *c *= t as f64);
    }
    Ok((charge, total_count))
}

/// Two-stage offset correction: stage 1 is a plain simulation of T steps
/// (residuals and stage-1 readout reported as-is); stage 2 recomputes ideal
/// counts from accumulated charge, layer by layer, and replays the head.
/// Returns (stage1, stage2).
pub fn two_stage_offset(snn: &mut SnnNet, data: &Dataset, cfg: &SimConfig) -> Result<(SimResult, SimResult)> {
    if cfg.correction != Correction::TwoStageOffset {
        return Err(Error::Config(
            "two_stage_offset requires correction = two-stage-offset".into(),
        ));
    }
    let stage1 = simulate(snn, data, &SimConfig { correction: Correction::None, ..cfg.clone() })?;

    let samples = data.len();
    let t_steps = cfg.t_steps;
    let mut per_step_predictions = Vec::with_capacity(samples);
    let mut per_step_correct = vec![0usize; t_steps];
    let mut per_step_counts = vec![0.0; t_steps];
    for si in 0..samples {
        let x = data.features.row(si);
        let mut preds = Vec::with_capacity(t_steps);
        for t in 1..=t_steps {
            let (logits, count) = rate_ideal_logits(snn, x, t)?;
            let pred = argmax(&logits);
            preds.push(pred);
            if pred == data.labels[si] {
                per_step_correct[t - 1] += 1;
            }
            per_step_counts[t - 1] += count;
        }
        per_step_predictions.push(preds);
    }
    let stage2 = SimResult {
        t_steps,
        samples,
        correction: Correction::TwoStageOffset,
        per_step_accuracy: per_step_correct
            .iter()
            .map(|&c| if samples == 0 { 0.0 } else { c as f64 / samples as f64 })
            .collect(),
        per_step_predictions,
        per_layer_spikes: stage1.per_layer_spikes.clone(),
        per_step_spikes_per_sample: per_step_counts
            .iter()
            .map(|&e| if samples == 0 { 0.0 } else { e / samples as f64 })
            .collect(),
        conservation_residuals: stage1.conservation_residuals.clone(),
        per_step_logits: None,
        trace: None,
    };
    Ok((stage1, stage2))
}

/// Outcome of feeding one hand-written current schedule into one neuron.
#[derive(Debug, Clone)]
pub struct ScheduleRun {
    pub th: f64,
    pub schedule: Vec<f64>,
    pub mode: Correction,
    pub u_trace: Vec<f64>,
    pub z_trace: Vec<f64>,
    /// Net signed spike count.
    pub count: i64,
    /// Ideal count for the same total charge (the ANN-equivalent state).
    pub ideal: i64,
}

/// Drives a single pre-charged neuron through an explicit current schedule.
pub fn run_schedule(th: f64, schedule: &[f64], mode: Correction) -> ScheduleRun {
    let mut layer = IfLayer::single(th);
    let mut u_trace = Vec::with_capacity(schedule.len());
    let mut z_trace = Vec::with_capacity(schedule.len());
    let mut z = [0.0f64];
    for &c in schedule {
        layer.advance(&[c], mode, &mut z);
        u_trace.push(layer.u[0]);
        z_trace.push(z[0]);
    }
    let total: f64 = schedule.iter().sum();
    ScheduleRun {
        th,
        schedule: schedule.to_vec(),
        mode,
        u_trace,
        z_trace,
        count: layer.cum[0] as i64,
        ideal: ideal_count(th, total, schedule.len()),
    }
}

/// One demo case: the same schedule under plain dynamics, negative spikes,
/// and two-stage offset correction.
#[derive(Debug, Clone)]
pub struct ScheduleOutcome {
    pub label: &'static str,
    pub plain: ScheduleRun,
    pub negative: ScheduleRun,
    pub ann_state: i64,
    pub two_stage_count: i64,
}

#[derive(Debug, Clone)]
pub struct UnevennessReport {
    pub th: f64,
    pub cases: Vec<ScheduleOutcome>,
}

/// The occasional-noise (unevenness) demonstration: input ordering changes
/// spike counts even when total charge is equal. The (+2, -2) schedule
/// makes a pre-charged neuron emit a spurious spike; both correction modes
/// restore the ANN-equivalent count.
pub fn unevenness_demo() -> UnevennessReport {
    let th = 1.0;
    let cases = [
        ("(+2, -2)", vec![2.0, -2.0]),
        ("(+1, +1)", vec![1.0, 1.0]),
        ("(-1, +2)", vec![-1.0, 2.0]),
    ];
    let cases = cases
        .into_iter()
        .map(|(label, schedule)| {
            let plain = run_schedule(th, &schedule, Correction::None);
            let negative = run_schedule(th, &schedule, Correction::NegativeSpikes);
            let total: f64 = schedule.iter().sum();
            let ann_state = ideal_count(th, total, schedule.len());
            ScheduleOutcome {
                label,
                ann_state,
                two_stage_count: ann_state,
                plain,
                negative,
            }
        })
        .collect();
    UnevennessReport { th, cases }
}

/// Trace rows as the documented CSV (sample, layer, neuron, t, u, z,
/// input_current).
pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("sample,layer,neuron,t,u,z,input_current\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.sample, r.layer, r.neuron, r.t, r.u, r.z, r.input_current
        ));
    }
    out
}
