//! Experiment harness: seed x p x noise-variant sweeps over a dataset,
//! accuracy-vs-T results as CSV, reproducibility manifest, and pivoted
//! report tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::convert::convert;
use crate::data::{gen_synthetic, load_idx, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::net::QuantNet;
use crate::rng::SplitMix64;
use crate::sim::{simulate, two_stage_offset, Correction, SimConfig, SimResult};
use crate::trainer::{evaluate_ann, train, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    /// IDX image/label pairs (MNIST layout). Optional sample limits keep
    /// runs desk-scale.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        limit_train: Option<usize>,
        #[serde(default)]
        limit_test: Option<usize>,
    },
    /// Deterministic synthetic data, split into train/eval by fraction.
    Synthetic {
        #[serde(flatten)]
        spec: SyntheticSpec,
        train_frac: f64,
    },
}

impl DatasetSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    if !p.exists() {
                        return Err(Error::Config(format!("dataset path {} not found", p.display())));
                    }
                }
                Ok(())
            }
            DatasetSource::Synthetic { train_frac, .. } => {
                if !(0.0 < *train_frac && *train_frac < 1.0) {
                    return Err(Error::Config("train_frac must be in (0, 1)".into()));
                }
                Ok(())
            }
        }
    }

    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                limit_train,
                limit_test,
            } => {
                let mut tr = load_idx(train_images, train_labels, "train")?;
                let mut te = load_idx(test_images, test_labels, "test")?;
                if let Some(n) = limit_train {
                    tr = tr.take(*n);
                }
                if let Some(n) = limit_test {
                    te = te.take(*n);
                }
                Ok((tr, te))
            }
            DatasetSource::Synthetic { spec, train_frac } => {
                Ok(gen_synthetic(spec)?.split(*train_frac))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Hidden layer widths of the MLP (input/output dims come from data).
    pub hidden: Vec<usize>,
    /// Base training recipe; seed, p and noise flag are overridden per cell.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub p_list: Vec<u32>,
    pub t_list: Vec<usize>,
    pub corrections: Vec<Correction>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.p_list.is_empty() || self.t_list.is_empty() || self.corrections.is_empty() {
            return Err(Error::Config(
                "seeds, p_list, t_list and corrections must all be nonempty".into(),
            ));
        }
        if self.t_list.contains(&0) {
            return Err(Error::Config("t_list entries must be >= 1".into()));
        }
        self.train.validate()?;
        self.dataset.validate()
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub const RESULTS_HEADER: &str = "seed,p,noise_adaptor,correction,T,ann_acc,snn_acc,spikes_per_sample";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    pub p: u32,
    pub noise_adaptor: bool,
    pub correction: Correction,
    pub t: usize,
    pub ann_acc: f64,
    pub snn_acc: f64,
    pub spikes_per_sample: f64,
}

impl ResultRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.seed,
            self.p,
            self.noise_adaptor,
            self.correction,
            self.t,
            self.ann_acc,
            self.snn_acc,
            self.spikes_per_sample
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellError {
    pub seed: u64,
    pub p: u32,
    pub noise_adaptor: bool,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub cells_total: usize,
    pub cells_failed: Vec<CellError>,
    /// Unix seconds at run start; excluded from determinism comparisons.
    pub started_at: u64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub errors: Vec<CellError>,
    pub results_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Runs one (seed, p, noise) cell end to end: train, evaluate the ANN,
/// convert, simulate at max(t_list) under each correction mode, and read
/// accuracy at every requested T off the per-step curve.
fn run_cell(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    seed: u64,
    p: u32,
    noise: bool,
) -> Result<Vec<ResultRow>> {
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    tc.p = p;
    tc.noise_adaptor = noise;

    let mut dims = vec![train_set.dim()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(train_set.num_classes);
    let mut init_rng = SplitMix64::new(SplitMix64::derive(seed, 0x1517));
    let mut net = QuantNet::mlp(&dims, p, noise, &mut init_rng)?;
    train(&mut net, train_set, test_set, &tc)?;
    let ann_acc = evaluate_ann(&net, test_set)?;
    let mut snn = convert(&net)?;

    let t_max = *cfg.t_list.iter().max().unwrap();
    let mut rows = Vec::new();
    for &correction in &cfg.corrections {
        let sim_cfg = SimConfig {
            t_steps: t_max,
            correction,
            record_trace: false,
            readout: Default::default(),
        };
        let res: SimResult = match correction {
            Correction::TwoStageOffset => two_stage_offset(&mut snn, test_set, &sim_cfg)?.1,
            _ => simulate(&mut snn, test_set, &sim_cfg)?,
        };
        if res.max_residual() > 1e-9 {
            return Err(Error::InvalidState(format!(
                "conservation audit failed: residual {}",
                res.max_residual()
            )));
        }
        for &t in &cfg.t_list {
            rows.push(ResultRow {
                seed,
                p,
                noise_adaptor: noise,
                correction,
                t,
                ann_acc,
                snn_acc: res.accuracy_at(t).unwrap_or(0.0),
                spikes_per_sample: res.spikes_per_sample_at(t).unwrap_or(0.0),
            });
        }
    }
    Ok(rows)
}

/// Full sweep; failed cells are recorded in the manifest and the remaining
/// cells still run. Writes results.csv and manifest.json under out_dir.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let started_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let (train_set, test_set) = cfg.dataset.load()?;

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut cells_total = 0;
    for &seed in &cfg.seeds {
        for &p in &cfg.p_list {
            for noise in [false, true] {
                cells_total += 1;
                match run_cell(cfg, &train_set, &test_set, seed, p, noise) {
                    Ok(cell_rows) => rows.extend(cell_rows),
                    Err(e) => errors.push(CellError {
                        seed,
                        p,
                        noise_adaptor: noise,
                        error: e.to_string(),
                    }),
                }
            }
        }
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    let results_path = cfg.out_dir.join("results.csv");
    std::fs::write(&results_path, results_csv(&rows))?;

    let manifest = Manifest {
        format_version: 1,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        cells_total,
        cells_failed: errors.clone(),
        started_at,
    };
    let manifest_path = cfg.out_dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(&manifest_path, json)?;

    Ok(RunOutput {
        rows,
        errors,
        results_path,
        manifest_path,
    })
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Parses the documented results schema back out of CSV text.
pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::MissingColumn("seed".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let need = ["seed", "p", "noise_adaptor", "correction", "T", "ann_acc", "snn_acc", "spikes_per_sample"];
    let mut idx = Vec::with_capacity(need.len());
    for name in need {
        match cols.iter().position(|c| *c == name) {
            Some(i) => idx.push(i),
            None => return Err(Error::MissingColumn(name.into())),
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> Result<&str> {
            fields.get(idx[i]).copied().ok_or_else(|| {
                Error::Config(format!("results row {} is short", lineno + 2))
            })
        };
        let parse_err = |what: &str, v: &str| {
            Error::Config(format!("results row {}: bad {what} value {v:?}", lineno + 2))
        };
        rows.push(ResultRow {
            seed: get(0)?.parse().map_err(|_| parse_err("seed", get(0).unwrap()))?,
            p: get(1)?.parse().map_err(|_| parse_err("p", get(1).unwrap()))?,
            noise_adaptor: get(2)?.parse().map_err(|_| parse_err("noise_adaptor", get(2).unwrap()))?,
            correction: get(3)?.parse()?,
            t: get(4)?.parse().map_err(|_| parse_err("T", get(4).unwrap()))?,
            ann_acc: get(5)?.parse().map_err(|_| parse_err("ann_acc", get(5).unwrap()))?,
            snn_acc: get(6)?.parse().map_err(|_| parse_err("snn_acc", get(6).unwrap()))?,
            spikes_per_sample: get(7)?.parse().map_err(|_| parse_err("spikes_per_sample", get(7).unwrap()))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct ReportTables {
    pub pivot_csv: String,
    pub text: String,
}

/// Pivots rows into variant x T accuracy tables (mean over seeds), plus a
/// with-minus-without noise-adaptor delta row per (p, correction).
pub fn report_from_rows(rows: &[ResultRow]) -> Result<ReportTables> {
    if rows.is_empty() {
        return Err(Error::Config("no result rows to report".into()));
    }
    let mut t_values: Vec<usize> = rows.iter().map(|r| r.t).collect();
    t_values.sort_unstable();
    t_values.dedup();

    type VariantKey = (u32, bool, String);
    let mut acc: BTreeMap<VariantKey, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut ann: BTreeMap<VariantKey, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.p, r.noise_adaptor, r.correction.to_string());
        acc.entry(key.clone()).or_default().entry(r.t).or_default().push(r.snn_acc);
        ann.entry(key).or_default().push(r.ann_acc);
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;

    let mut csv = String::from("variant,p,noise_adaptor,correction,ann_acc");
    for t in &t_values {
        csv.push_str(&format!(",T={t}"));
    }
    csv.push('\n');

    let mut text = String::new();
    text.push_str(&format!("{:<34}{:>9}", "variant", "ANN"));
    for t in &t_values {
        text.push_str(&format!("{:>9}", format!("T={t}")));
    }
    text.push('\n');

    let mut variant_means: BTreeMap<VariantKey, BTreeMap<usize, f64>> = BTreeMap::new();
    for (key, by_t) in &acc {
        let (p, noise, correction) = key;
        let label = format!("p={p} {} {correction}", if *noise { "w/-na" } else { "wo-na" });
        let ann_mean = mean(&ann[key]);
        csv.push_str(&format!("{label},{p},{noise},{correction},{ann_mean}"));
        text.push_str(&format!("{label:<34}{:>9.4}", ann_mean));
        let mut means = BTreeMap::new();
        for t in &t_values {
            if let Some(vals) = by_t.get(t) {
                let m = mean(vals);
                csv.push_str(&format!(",{m}"));
                text.push_str(&format!("{m:>9.4}"));
                means.insert(*t, m);
            } else {
                csv.push(',');
                text.push_str(&format!("{:>9}", "-"));
            }
        }
        csv.push('\n');
        text.push('\n');
        variant_means.insert(key.clone(), means);
    }

    // delta rows: with NA minus without, per (p, correction)
    let mut combos: Vec<(u32, String)> = variant_means.keys().map(|(p, _, c)| (*p, c.clone())).collect();
    combos.sort();
    combos.dedup();
    for (p, correction) in combos {
        let with = variant_means.get(&(p, true, correction.clone()));
        let without = variant_means.get(&(p, false, correction.clone()));
        if let (Some(w), Some(wo)) = (with, without) {
            let label = format!("p={p} delta(na) {correction}");
            csv.push_str(&format!("{label},{p},delta,{correction},"));
            text.push_str(&format!("{label:<34}{:>9}", ""));
            for t in &t_values {
                match (w.get(t), wo.get(t)) {
                    (Some(a), Some(b)) => {
                        let d = a - b;
                        csv.push_str(&format!(",{d}"));
                        text.push_str(&format!("{d:>+9.4}"));
                    }
                    _ => {
                        csv.push(',');
                        text.push_str(&format!("{:>9}", "-"));
                    }
                }
            }
            csv.push('\n');
            text.push('\n');
        }
    }

    Ok(ReportTables { pivot_csv: csv, text })
}

pub fn report_from_csv_file(path: &Path) -> Result<ReportTables> {
    let text = std::fs::read_to_string(path)?;
    let rows = parse_results_csv(&text)?;
    report_from_rows(&rows)
}
