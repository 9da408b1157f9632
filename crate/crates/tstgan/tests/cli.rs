//! End-to-end CLI behavior: subcommand wiring, exit codes, manifests and
//! file determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tstgan"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn tstgan");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin().args(args).output().expect("spawn tstgan").status.code().unwrap_or(-1)
}

fn tiny_config_json(dir: &Path) -> String {
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
            "model_dim": 8, "heads": 2, "ff_hidden": 16, "layers": 1,
            "seq_len": 8, "batch_size": 8,
            "stage1_steps": 3, "stage2_steps": 3, "joint_steps": 2,
            "seed": 11
        }"#,
    )
    .unwrap();
    cfg.display().to_string()
}

#[test]
fn sines_is_deterministic_and_writes_one_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a.csv");
    let out2 = dir.path().join("b.csv");
    for out in [&out1, &out2] {
        run_ok(&[
            "sines",
            "--samples",
            "50",
            "--seq-len",
            "8",
            "--features",
            "2",
            "--seed",
            "9",
            "--out",
            &out.display().to_string(),
        ]);
    }
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out2).unwrap(),
        "same flags and seed must give identical files"
    );
    let manifest_path = dir.path().join("a.csv.manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["command"], "sines");
    assert_eq!(manifest["seeds"][0], 9);
    assert!(manifest["outputs"][0].as_str().unwrap().ends_with("a.csv"));
    let manifests: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("a.csv.manifest")
        })
        .collect();
    assert_eq!(manifests.len(), 1);
}

#[test]
fn sines_defaults_match_the_reference_dataset_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sines.csv");
    run_ok(&["sines", "--out", &out.display().to_string()]);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "sample_id,t,f0,f1,f2,f3,f4");
    assert_eq!(text.lines().count(), 1 + 10_000 * 24);
}

#[test]
fn zero_samples_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(
        exit_code(&["sines", "--samples", "0", "--out", &out.display().to_string()]),
        1
    );
}

#[test]
fn missing_data_file_is_an_io_error_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "train",
            "--data",
            "/nonexistent/data.csv",
            "--out-ckpt",
            &dir.path().join("m.tstg").display().to_string(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.csv"));
}

#[test]
fn pipeline_train_synthesize_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    run_ok(&[
        "sines",
        "--samples",
        "120",
        "--seq-len",
        "8",
        "--features",
        "2",
        "--seed",
        "4",
        "--out",
        &data.display().to_string(),
    ]);
    let cfg = tiny_config_json(dir.path());
    let ckpt = dir.path().join("model.tstg");
    run_ok(&[
        "train",
        "--data",
        &data.display().to_string(),
        "--config",
        &cfg,
        "--out-ckpt",
        &ckpt.display().to_string(),
    ]);
    assert!(ckpt.exists());

    // Metrics log exists and stages appear in schedule order.
    let metrics = dir.path().join("model.metrics.jsonl");
    let stages: Vec<String> = std::fs::read_to_string(&metrics)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["stage"]
            .as_str()
            .unwrap()
            .to_string())
        .collect();
    let first_stage2 = stages.iter().position(|s| s == "stage2").unwrap();
    let first_joint = stages.iter().position(|s| s == "joint").unwrap();
    assert!(stages[..first_stage2].iter().all(|s| s == "stage1"));
    assert!(first_stage2 < first_joint);

    // Synthesis is deterministic per seed.
    let s1 = dir.path().join("s1.csv");
    let s2 = dir.path().join("s2.csv");
    for s in [&s1, &s2] {
        run_ok(&[
            "synthesize",
            "--ckpt",
            &ckpt.display().to_string(),
            "--n",
            "30",
            "--seed",
            "5",
            "--out",
            &s.display().to_string(),
        ]);
    }
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());
    let text = std::fs::read_to_string(&s1).unwrap();
    assert_eq!(text.lines().count(), 1 + 30 * 8);

    // Evaluate with every metric; report carries mean/std/n_runs per score.
    let report = dir.path().join("report.json");
    run_ok(&[
        "evaluate",
        "--real",
        &data.display().to_string(),
        "--synth",
        &s1.display().to_string(),
        "--metrics",
        "predictive,discriminative,tsne,tsne-diff",
        "--runs",
        "2",
        "--seed",
        "6",
        "--seq-len",
        "8",
        "--posthoc-steps",
        "40",
        "--out",
        &report.display().to_string(),
    ]);
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for metric in ["predictive", "discriminative"] {
        assert!(rep[metric]["mean"].is_number(), "{metric} missing mean");
        assert!(rep[metric]["std"].is_number());
        assert_eq!(rep[metric]["n_runs"], 2);
    }
    assert!(rep["tsne"]["kl"].is_number());
    assert!(dir.path().join("tsne.csv").exists());
    assert!(dir.path().join("tsne.png").exists());
    assert!(dir.path().join("tsne_diff.csv").exists());
    let manifest = dir.path().join("report.json.manifest.json");
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["command"], "evaluate");
    assert_eq!(m["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(m["input_hashes"].as_object().unwrap().len(), 2);
}

#[test]
fn synthesize_rejects_zero_and_bad_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    assert_eq!(
        exit_code(&[
            "synthesize",
            "--ckpt",
            "/nonexistent.tstg",
            "--n",
            "0",
            "--out",
            &out.display().to_string()
        ]),
        1,
        "zero n is a usage error"
    );
    assert_eq!(
        exit_code(&[
            "synthesize",
            "--ckpt",
            "/nonexistent.tstg",
            "--out",
            &out.display().to_string()
        ]),
        2,
        "missing checkpoint is a data error"
    );
    let junk = dir.path().join("junk.tstg");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    assert_eq!(
        exit_code(&[
            "synthesize",
            "--ckpt",
            &junk.display().to_string(),
            "--out",
            &out.display().to_string()
        ]),
        2,
        "bad magic is a data error"
    );
}

#[test]
fn evaluate_rejects_unknown_metric() {
    assert_eq!(
        exit_code(&[
            "evaluate",
            "--real",
            "r.csv",
            "--synth",
            "s.csv",
            "--metrics",
            "bogus",
            "--out",
            "rep.json"
        ]),
        1
    );
}

#[test]
fn train_rejects_unknown_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"not_a_real_knob": 3}"#).unwrap();
    let data = dir.path().join("d.csv");
    run_ok(&[
        "sines",
        "--samples",
        "30",
        "--seq-len",
        "8",
        "--features",
        "1",
        "--out",
        &data.display().to_string(),
    ]);
    assert_eq!(
        exit_code(&[
            "train",
            "--data",
            &data.display().to_string(),
            "--config",
            &cfg.display().to_string(),
            "--out-ckpt",
            &dir.path().join("m.tstg").display().to_string()
        ]),
        1
    );
}

#[test]
fn ablation_base_checkpoint_lacks_embedder_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    run_ok(&[
        "sines",
        "--samples",
        "60",
        "--seq-len",
        "8",
        "--features",
        "2",
        "--seed",
        "2",
        "--out",
        &data.display().to_string(),
    ]);
    let cfg = tiny_config_json(dir.path());
    let ckpt = dir.path().join("base.tstg");
    run_ok(&[
        "train",
        "--data",
        &data.display().to_string(),
        "--config",
        &cfg,
        "--ablation",
        "base",
        "--out-ckpt",
        &ckpt.display().to_string(),
    ]);
    let loaded = tstgan::train::load_checkpoint(&ckpt).unwrap();
    let names: Vec<String> = loaded
        .model
        .named_params()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    assert!(names.iter().all(|n| !n.starts_with("embedder.")));
    assert!(names.iter().any(|n| n.starts_with("generator.out_proj")));
}

#[test]
fn gradcheck_lists_every_primitive_once_and_detects_corruption() {
    let out = run_ok(&["gradcheck", "--probes", "8"]);
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    for name in [
        "matmul", "add", "sub", "mul", "div", "add_scalar", "mul_scalar", "sqrt", "abs",
        "sigmoid", "tanh", "gelu", "sum", "mean", "sum_axis", "mean_axis", "reshape",
        "transpose", "concat", "slice", "softmax", "layer_norm",
    ] {
        let count = stdout
            .lines()
            .filter(|l| l.trim_start().starts_with(&format!("{name} ")))
            .count();
        assert_eq!(count, 1, "primitive '{name}' listed {count} times");
    }
    let code = exit_code(&["gradcheck", "--probes", "8", "--corrupt", "matmul"]);
    assert_eq!(code, 3, "corrupted gradient rule must exit nonzero");
}
