//! Command-line harness around the core library. Every subcommand is
//! pipeable through file paths; there is no hidden state between
//! invocations.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use quantsnn_core::checkpoint::{self, CheckpointMeta, SnnSection};
use quantsnn_core::convert::{convert, PRECHARGE_FRACTION};
use quantsnn_core::experiment::{
    report_from_csv_file, run_experiment, DatasetSource, ExperimentConfig,
};
use quantsnn_core::net::QuantNet;
use quantsnn_core::rng::SplitMix64;
use quantsnn_core::selftest::run_selftest;
use quantsnn_core::sim::{simulate, trace_to_csv, two_stage_offset, Correction, Readout, SimConfig};
use quantsnn_core::trainer::{evaluate_ann, train, TrainConfig};

#[derive(Parser)]
#[command(name = "quantsnn", version, about = "Quantized-ANN to spiking-network conversion lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a quantized network from a JSON config and save a checkpoint.
    Train(TrainArgs),
    /// Convert a trained checkpoint into a spiking checkpoint.
    Convert(ConvertArgs),
    /// Simulate a spiking checkpoint over T time steps on a dataset.
    Simulate(SimulateArgs),
    /// Run a full seed x p x variant sweep and write results.csv.
    Sweep(SweepArgs),
    /// Pivot a results.csv into accuracy-vs-T tables.
    Report(ReportArgs),
    /// Show the occasional-noise demonstration and its corrections.
    DemoUnevenness,
    /// Run the built-in invariant suite.
    Selftest,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file: {"dataset": {...}, "hidden": [...], "train": {...},
    /// "activation": "quant"|"relu" (optional, default quant)}
    #[arg(long)]
    config: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of per-epoch loss/accuracy.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Fine-tune from an existing checkpoint (e.g. a float pre-trained
    /// network): its rectifier activations become quant layers with the
    /// config's (p, noise) and training continues from its weights.
    #[arg(long)]
    init_from: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Trained ANN checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output spiking checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Spiking checkpoint produced by `convert` (a plain ANN checkpoint is
    /// converted on the fly).
    #[arg(long)]
    snn: PathBuf,
    /// Dataset JSON (same schema as the sweep config's "dataset" field);
    /// the eval split is simulated.
    #[arg(long)]
    data: PathBuf,
    /// Number of time steps.
    #[arg(long, short = 't')]
    t: usize,
    /// none | negative-spikes | two-stage-offset
    #[arg(long, default_value = "none")]
    correction: Correction,
    /// accumulated | instantaneous per-step readout.
    #[arg(long, default_value = "accumulated")]
    readout: ReadoutArg,
    /// Write a per-neuron trace CSV (small nets only).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the per-step accuracy curve as CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ReadoutArg {
    Accumulated,
    Instantaneous,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's out_dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// results.csv from a sweep.
    #[arg(long)]
    results: PathBuf,
    /// Where to write report.csv (defaults next to the input).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Train-subcommand config file.
#[derive(serde::Deserialize)]
struct TrainSpec {
    dataset: DatasetSource,
    hidden: Vec<usize>,
    train: TrainConfig,
    #[serde(default)]
    activation: Activation,
}

#[derive(serde::Deserialize, Clone, Copy, PartialEq, Default)]
#[serde(rename_all = "snake_case")]
enum Activation {
    #[default]
    Quant,
    Relu,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Convert(args) => cmd_convert(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
        Command::DemoUnevenness => cmd_demo(),
        Command::Selftest => cmd_selftest(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let spec: TrainSpec = read_json(&args.config)?;
    spec.train.validate()?;
    spec.dataset.validate()?;
    let (train_set, eval_set) = spec.dataset.load()?;

    let mut net = match &args.init_from {
        Some(ckpt_path) => {
            let (base, _) = checkpoint::load_checkpoint(ckpt_path)?;
            if base.in_dim() != train_set.dim() || base.out_dim() != train_set.num_classes {
                bail!(
                    "checkpoint is {}-in/{}-out but the dataset needs {}/{}",
                    base.in_dim(),
                    base.out_dim(),
                    train_set.dim(),
                    train_set.num_classes
                );
            }
            println!("fine-tuning from {}", ckpt_path.display());
            base.quantize_activations(spec.train.p, spec.train.noise_adaptor)?
        }
        None => {
            let mut dims = vec![train_set.dim()];
            dims.extend_from_slice(&spec.hidden);
            dims.push(train_set.num_classes);
            let mut rng = SplitMix64::new(SplitMix64::derive(spec.train.seed, 0x1517));
            match spec.activation {
                Activation::Quant => {
                    QuantNet::mlp(&dims, spec.train.p, spec.train.noise_adaptor, &mut rng)?
                }
                Activation::Relu => QuantNet::relu_mlp(&dims, &mut rng)?,
            }
        }
    };

    let history = train(&mut net, &train_set, &eval_set, &spec.train)?;
    let ann_acc = evaluate_ann(&net, &eval_set)?;

    let meta = CheckpointMeta {
        seed: spec.train.seed,
        epoch: spec.train.epochs,
        config_hash: checkpoint::config_hash(&spec.train),
    };
    checkpoint::save_checkpoint(&net, &meta, &args.out)?;
    println!(
        "trained {} epochs on {} ({} samples), eval accuracy {:.4}",
        spec.train.epochs,
        train_set.name,
        train_set.len(),
        ann_acc
    );
    println!("checkpoint written to {}", args.out.display());

    if let Some(hist_path) = args.history {
        let mut csv = String::from("epoch,train_loss,eval_acc\n");
        for h in &history {
            csv.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.eval_acc));
        }
        std::fs::write(&hist_path, csv)?;
        println!("history written to {}", hist_path.display());
    }
    Ok(())
}

fn cmd_convert(args: ConvertArgs) -> Result<()> {
    let (net, src) = checkpoint::load_checkpoint(&args.checkpoint)?;
    let snn = convert(&net)?;
    let mut ckpt = checkpoint::checkpoint_from_net(&net, &CheckpointMeta {
        seed: src.seed,
        epoch: src.epoch,
        config_hash: src.config_hash.clone(),
    });
    ckpt.snn = Some(SnnSection {
        th: snn.if_layers().map(|l| l.th).collect(),
        precharge: PRECHARGE_FRACTION,
    });
    checkpoint::write_checkpoint_file(&ckpt, &args.out)?;
    let ths: Vec<String> = snn.if_layers().map(|l| format!("{}", l.th)).collect();
    println!(
        "converted {} spiking layers (th = [{}]), pre-charge {:.1} th",
        snn.num_if_layers(),
        ths.join(", "),
        PRECHARGE_FRACTION
    );
    println!("spiking checkpoint written to {}", args.out.display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let (net, ckpt) = checkpoint::load_checkpoint(&args.snn)?;
    let mut snn = convert(&net)?;
    if let Some(section) = &ckpt.snn {
        let ths: Vec<f64> = snn.if_layers().map(|l| l.th).collect();
        if section.th != ths {
            bail!(
                "snn section thresholds {:?} disagree with parameters (p*s = {:?})",
                section.th,
                ths
            );
        }
    }
    let source: DatasetSource = read_json(&args.data)?;
    source.validate()?;
    let (_, eval_set) = source.load()?;

    let cfg = SimConfig {
        t_steps: args.t,
        correction: args.correction,
        record_trace: args.trace.is_some(),
        readout: match args.readout {
            ReadoutArg::Accumulated => Readout::Accumulated,
            ReadoutArg::Instantaneous => Readout::Instantaneous,
        },
    };
    let result = match args.correction {
        Correction::TwoStageOffset => {
            let (stage1, stage2) = two_stage_offset(&mut snn, &eval_set, &cfg)?;
            println!(
                "stage 1 accuracy at T={}: {:.4}",
                args.t,
                stage1.accuracy_at(args.t).unwrap_or(0.0)
            );
            stage2
        }
        _ => simulate(&mut snn, &eval_set, &cfg)?,
    };

    println!(
        "simulated {} samples for T={} ({}), max conservation residual {:.2e}",
        result.samples,
        args.t,
        args.correction,
        result.max_residual()
    );
    for t in [1usize, 2, 4, 8, 16, 32, 64, 128, 256] {
        if t <= args.t {
            println!(
                "  T={t:>4}: accuracy {:.4}, spikes/sample {:.1}",
                result.accuracy_at(t).unwrap(),
                result.spikes_per_sample_at(t).unwrap()
            );
        }
    }
    if args.t > 1 {
        println!(
            "  final: accuracy {:.4} at T={}",
            result.accuracy_at(args.t).unwrap(),
            args.t
        );
    }

    if let Some(curve_path) = args.curve {
        let mut csv = String::from("T,accuracy,spikes_per_sample\n");
        for t in 1..=args.t {
            csv.push_str(&format!(
                "{},{},{}\n",
                t,
                result.accuracy_at(t).unwrap(),
                result.spikes_per_sample_at(t).unwrap()
            ));
        }
        std::fs::write(&curve_path, csv)?;
        println!("accuracy curve written to {}", curve_path.display());
    }
    if let (Some(trace_path), Some(rows)) = (args.trace, &result.trace) {
        std::fs::write(&trace_path, trace_to_csv(rows))?;
        println!("trace written to {}", trace_path.display());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = read_json(&args.config)?;
    if let Some(dir) = args.out_dir {
        cfg.out_dir = dir;
    }
    let out = run_experiment(&cfg)?;
    println!(
        "sweep complete: {} rows, {} failed cells",
        out.rows.len(),
        out.errors.len()
    );
    for e in &out.errors {
        eprintln!(
            "  cell seed={} p={} noise={} failed: {}",
            e.seed, e.p, e.noise_adaptor, e.error
        );
    }
    println!("results: {}", out.results_path.display());
    println!("manifest: {}", out.manifest_path.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let tables = report_from_csv_file(&args.results)?;
    print!("{}", tables.text);
    let out = args
        .out
        .unwrap_or_else(|| args.results.with_file_name("report.csv"));
    std::fs::write(&out, &tables.pivot_csv)?;
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_demo() -> Result<()> {
    let report = quantsnn_core::sim::unevenness_demo();
    println!("occasional noise (unevenness): spike counts depend on input order");
    println!("single pre-charged neuron, th = {}, u0 = 0.5 th\n", report.th);
    for case in &report.cases {
        println!("schedule {}:", case.label);
        for (t, (&u, &z)) in case
            .plain
            .u_trace
            .iter()
            .zip(case.plain.z_trace.iter())
            .enumerate()
        {
            println!("  t={} current={:+} u={:+.2} z={}", t + 1, case.plain.schedule[t], u, z);
        }
        println!(
            "  plain count {} | equivalent quantized state {} | negative-spikes {} | two-stage {}",
            case.plain.count, case.ann_state, case.negative.count, case.two_stage_count
        );
        if case.plain.count != case.ann_state {
            println!("  -> spurious spike; both corrections restore the state");
        } else {
            println!("  -> no error for this ordering");
        }
        println!();
    }
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let results = run_selftest()?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("[{status}] {:<28} {}", r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", results.len());
    }
    println!("all {} checks passed", results.len());
    Ok(())
}
