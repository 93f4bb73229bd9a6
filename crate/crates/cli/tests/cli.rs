//! End-to-end pipeline through the installed binary: train -> convert ->
//! simulate -> sweep -> report, plus the demo and selftest commands.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quantsnn"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("quantsnn-cli-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const DATASET_JSON: &str = r#"{
  "source": "synthetic",
  "kind": "blobs",
  "n": 400,
  "classes": 3,
  "dim": 6,
  "spread": 0.4,
  "seed": 17,
  "train_frac": 0.75
}"#;

#[test]
fn pipeline_train_convert_simulate() {
    let dir = workdir("pipeline");
    let data = dir.join("data.json");
    std::fs::write(&data, DATASET_JSON).unwrap();
    let train_cfg = dir.join("train.json");
    std::fs::write(
        &train_cfg,
        format!(
            r#"{{
  "dataset": {DATASET_JSON},
  "hidden": [16],
  "train": {{
    "epochs": 6, "batch_size": 32, "lr_max": 0.1, "lr_min": 0.0,
    "weight_decay": 0.0005, "momentum": 0.9, "seed": 3, "p": 2,
    "noise_adaptor": true
  }}
}}"#
        ),
    )
    .unwrap();

    let ckpt = dir.join("ckpt.json");
    let hist = dir.join("history.csv");
    let out = bin()
        .args(["train", "--config"])
        .arg(&train_cfg)
        .arg("--out")
        .arg(&ckpt)
        .arg("--history")
        .arg(&hist)
        .output()
        .unwrap();
    assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());
    let hist_text = std::fs::read_to_string(&hist).unwrap();
    assert!(hist_text.starts_with("epoch,train_loss,eval_acc"));

    let snn = dir.join("snn.json");
    let out = bin()
        .args(["convert", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&snn)
        .output()
        .unwrap();
    assert!(out.status.success(), "convert failed: {}", String::from_utf8_lossy(&out.stderr));
    let snn_text = std::fs::read_to_string(&snn).unwrap();
    assert!(snn_text.contains("\"snn\""), "spiking checkpoint must carry the snn section");
    assert!(snn_text.contains("\"precharge\": 0.5"));

    let curve = dir.join("curve.csv");
    let trace = dir.join("trace.csv");
    let out = bin()
        .args(["simulate", "--snn"])
        .arg(&snn)
        .arg("--data")
        .arg(&data)
        .args(["-t", "8", "--curve"])
        .arg(&curve)
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "simulate failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max conservation residual"), "{stdout}");
    let curve_text = std::fs::read_to_string(&curve).unwrap();
    assert_eq!(curve_text.lines().count(), 9); // header + 8 steps
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("sample,layer,neuron,t,u,z,input_current"));

    // negative-spike and two-stage modes run through the same entry point
    for mode in ["negative-spikes", "two-stage-offset"] {
        let out = bin()
            .args(["simulate", "--snn"])
            .arg(&snn)
            .arg("--data")
            .arg(&data)
            .args(["-t", "4", "--correction", mode])
            .output()
            .unwrap();
        assert!(out.status.success(), "simulate {mode} failed");
    }
}

#[test]
fn sweep_then_report() {
    let dir = workdir("sweep");
    let cfg = dir.join("experiment.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{
  "dataset": {DATASET_JSON},
  "hidden": [12],
  "train": {{
    "epochs": 4, "batch_size": 32, "lr_max": 0.1, "lr_min": 0.0,
    "weight_decay": 0.0005, "momentum": 0.9, "seed": 1, "p": 2,
    "noise_adaptor": false
  }},
  "seeds": [1, 2],
  "p_list": [1, 2],
  "t_list": [1, 2, 4],
  "corrections": ["none"],
  "out_dir": {:?}
}}"#,
            dir.join("results").to_str().unwrap()
        ),
    )
    .unwrap();

    let out = bin().args(["sweep", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "sweep failed: {}", String::from_utf8_lossy(&out.stderr));
    let results = dir.join("results/results.csv");
    assert!(results.exists());
    let text = std::fs::read_to_string(&results).unwrap();
    assert!(text.starts_with("seed,p,noise_adaptor,correction,T,ann_acc,snn_acc,spikes_per_sample"));
    // 2 seeds x 2 p x 2 variants x 3 T values
    assert_eq!(text.lines().count(), 1 + 24);
    assert!(dir.join("results/manifest.json").exists());

    let out = bin().args(["report", "--results"]).arg(&results).output().unwrap();
    assert!(out.status.success(), "report failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("variant"), "{stdout}");
    assert!(dir.join("results/report.csv").exists());
}

#[test]
fn demo_and_selftest() {
    let out = bin().arg("demo-unevenness").output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("(+2, -2)"), "{stdout}");
    assert!(stdout.contains("spurious"), "{stdout}");

    let out = bin().arg("selftest").output().unwrap();
    assert!(out.status.success(), "selftest failed: {}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all 8 checks passed"), "{stdout}");
    assert_eq!(stdout.matches("[PASS]").count(), 8, "{stdout}");
}

#[test]
fn float_pretrain_then_finetune() {
    let dir = workdir("finetune");
    let float_cfg = dir.join("float.json");
    std::fs::write(
        &float_cfg,
        format!(
            r#"{{
  "dataset": {DATASET_JSON},
  "hidden": [16],
  "activation": "relu",
  "train": {{
    "epochs": 5, "batch_size": 32, "lr_max": 0.1, "lr_min": 0.0,
    "weight_decay": 0.0005, "momentum": 0.9, "seed": 4, "p": 2,
    "noise_adaptor": false
  }}
}}"#
        ),
    )
    .unwrap();
    let float_ckpt = dir.join("float.ckpt.json");
    let out = bin()
        .args(["train", "--config"])
        .arg(&float_cfg)
        .arg("--out")
        .arg(&float_ckpt)
        .output()
        .unwrap();
    assert!(out.status.success(), "float train failed: {}", String::from_utf8_lossy(&out.stderr));

    // a float checkpoint cannot convert directly
    let out = bin()
        .args(["convert", "--checkpoint"])
        .arg(&float_ckpt)
        .arg("--out")
        .arg(dir.join("nope.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("block"));

    // fine-tune with quantized activations, then convert
    let fine_cfg = dir.join("fine.json");
    std::fs::write(
        &fine_cfg,
        format!(
            r#"{{
  "dataset": {DATASET_JSON},
  "hidden": [16],
  "train": {{
    "epochs": 3, "batch_size": 32, "lr_max": 0.02, "lr_min": 0.0,
    "weight_decay": 0.0005, "momentum": 0.9, "seed": 4, "p": 2,
    "noise_adaptor": true
  }}
}}"#
        ),
    )
    .unwrap();
    let fine_ckpt = dir.join("fine.ckpt.json");
    let out = bin()
        .args(["train", "--config"])
        .arg(&fine_cfg)
        .arg("--init-from")
        .arg(&float_ckpt)
        .arg("--out")
        .arg(&fine_ckpt)
        .output()
        .unwrap();
    assert!(out.status.success(), "finetune failed: {}", String::from_utf8_lossy(&out.stderr));
    let out = bin()
        .args(["convert", "--checkpoint"])
        .arg(&fine_ckpt)
        .arg("--out")
        .arg(dir.join("fine.snn.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "convert after finetune failed: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_checkpoint_is_a_clean_error() {
    let dir = workdir("badckpt");
    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{\"format_version\": 1,").unwrap();
    let out = bin()
        .args(["convert", "--checkpoint"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.join("out.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line") && stderr.contains("column"), "{stderr}");
}
