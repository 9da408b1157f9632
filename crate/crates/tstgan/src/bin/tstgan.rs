//! Command-line entry point: data generation, training, synthesis,
//! evaluation and gradient verification.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure. Every run writes one manifest JSON next to its primary output
//! recording the config, seeds, input hashes and produced artifacts.

use clap::{Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use tstgan::data;
use tstgan::error::{Error, Result};
use tstgan::eval::{self, tsne};
use tstgan::model::AblationMode;
use tstgan::rng::derive_seed;
use tstgan::train::{self, MetricsLog, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "tstgan", version, about = "Transformer time-series GAN laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the multivariate sines dataset as a window CSV.
    Sines {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 24)]
        seq_len: usize,
        #[arg(long, default_value_t = 5)]
        features: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a CSV dataset (raw series or window format).
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON config file; CLI flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ablation: none|ml|mm_auto|embedding|mm|base.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        out_ckpt: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        seq_len: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        stage1_steps: Option<usize>,
        #[arg(long)]
        stage2_steps: Option<usize>,
        #[arg(long)]
        joint_steps: Option<usize>,
        #[arg(long)]
        lambda_ml: Option<f64>,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        /// Comma-separated column names to drop from raw series CSVs.
        #[arg(long)]
        drop_columns: Option<String>,
    },
    /// Sample synthetic windows from a trained checkpoint.
    Synthesize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score synthetic data against real data.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        /// Comma-separated: predictive,discriminative,tsne,tsne-diff.
        #[arg(long, default_value = "predictive,discriminative")]
        metrics: String,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 24)]
        seq_len: usize,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        #[arg(long)]
        drop_columns: Option<String>,
        /// Post-hoc training steps per run.
        #[arg(long, default_value_t = 2000)]
        posthoc_steps: usize,
        /// Directory for t-SNE CSV/PNG exports (defaults to the report's).
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
    /// Verify every gradient rule against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        probes: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Test fixture: corrupt the named primitive's analytic gradient.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Sines {
            samples,
            seq_len,
            features,
            seed,
            out,
        } => cmd_sines(samples, seq_len, features, seed, &out),
        Cmd::Train {
            data,
            config,
            ablation,
            out_ckpt,
            seed,
            seq_len,
            batch_size,
            stage1_steps,
            stage2_steps,
            joint_steps,
            lambda_ml,
            train_frac,
            drop_columns,
        } => cmd_train(TrainArgs {
            data,
            config,
            ablation,
            out_ckpt,
            seed,
            seq_len,
            batch_size,
            stage1_steps,
            stage2_steps,
            joint_steps,
            lambda_ml,
            train_frac,
            drop_columns,
        }),
        Cmd::Synthesize { ckpt, n, seed, out } => cmd_synthesize(&ckpt, n, seed, &out),
        Cmd::Evaluate {
            real,
            synth,
            metrics,
            runs,
            seed,
            out,
            seq_len,
            train_frac,
            drop_columns,
            posthoc_steps,
            plot_dir,
        } => cmd_evaluate(EvalArgs {
            real,
            synth,
            metrics,
            runs,
            seed,
            out,
            seq_len,
            train_frac,
            drop_columns,
            posthoc_steps,
            plot_dir,
        }),
        Cmd::Gradcheck {
            probes,
            seed,
            corrupt,
        } => cmd_gradcheck(probes, seed, corrupt.as_deref()),
    }
}

// ── Manifest ─────────────────────────────────────────────────────────

fn write_manifest(
    primary_output: &Path,
    command: &str,
    config: serde_json::Value,
    seeds: &[u64],
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), data::file_sha256(p)?);
    }
    let manifest = serde_json::json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "seeds": seeds,
        "input_hashes": hashes,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let path = manifest_path(primary_output);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn manifest_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".to_string());
    name.push_str(".manifest.json");
    primary_output.with_file_name(name)
}

// ── Subcommands ──────────────────────────────────────────────────────

fn cmd_sines(samples: usize, seq_len: usize, features: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = data::generate_sines(samples, seq_len, features, 0.8, seed)?;
    let batch = ds.batch_from_indices(&(0..ds.n).collect::<Vec<_>>());
    data::export_synthetic(out, &batch)?;
    write_manifest(
        out,
        "sines",
        serde_json::json!({
            "samples": samples, "seq_len": seq_len, "features": features,
        }),
        &[seed],
        &[],
        &[out],
    )?;
    println!(
        "wrote {} samples x {} steps x {} features to {}",
        samples,
        seq_len,
        features,
        out.display()
    );
    Ok(())
}

struct TrainArgs {
    data: PathBuf,
    config: Option<PathBuf>,
    ablation: Option<String>,
    out_ckpt: PathBuf,
    seed: Option<u64>,
    seq_len: Option<usize>,
    batch_size: Option<usize>,
    stage1_steps: Option<usize>,
    stage2_steps: Option<usize>,
    joint_steps: Option<usize>,
    lambda_ml: Option<f64>,
    train_frac: f64,
    drop_columns: Option<String>,
}

/// Optional overrides accepted in the JSON config file. Anything omitted
/// keeps its default; CLI flags override the file.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model_dim: Option<usize>,
    heads: Option<usize>,
    ff_hidden: Option<usize>,
    layers: Option<usize>,
    seq_len: Option<usize>,
    noise_dim: Option<usize>,
    p_mask: Option<f64>,
    batch_size: Option<usize>,
    stage1_steps: Option<usize>,
    stage2_steps: Option<usize>,
    joint_steps: Option<usize>,
    lr_stage12: Option<f64>,
    lr_joint: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    lambda_ml: Option<f64>,
    seed: Option<u64>,
    ablation: Option<String>,
}

fn split_drop_columns(spec: &Option<String>) -> Vec<String> {
    spec.as_deref()
        .map(|s| {
            s.split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file_cfg: ConfigFile = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };

    // Defaults <- config file <- CLI flags; the feature dimension always
    // comes from the data.
    let mut cfg = TrainConfig::with_features(1);
    let set = |target: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *target = v;
        }
    };
    set(&mut cfg.model.model_dim, file_cfg.model_dim);
    set(&mut cfg.model.heads, file_cfg.heads);
    set(&mut cfg.model.ff_hidden, file_cfg.ff_hidden);
    set(&mut cfg.model.layers, file_cfg.layers);
    set(&mut cfg.model.seq_len, file_cfg.seq_len);
    set(&mut cfg.batch_size, file_cfg.batch_size);
    set(&mut cfg.stage1_steps, file_cfg.stage1_steps);
    set(&mut cfg.stage2_steps, file_cfg.stage2_steps);
    set(&mut cfg.joint_steps, file_cfg.joint_steps);
    if let Some(v) = file_cfg.p_mask {
        cfg.p_mask = v;
    }
    if let Some(v) = file_cfg.lr_stage12 {
        cfg.lr_stage12 = v;
    }
    if let Some(v) = file_cfg.lr_joint {
        cfg.lr_joint = v;
    }
    if let Some(v) = file_cfg.beta1 {
        cfg.beta1 = v;
    }
    if let Some(v) = file_cfg.beta2 {
        cfg.beta2 = v;
    }
    if let Some(v) = file_cfg.lambda_ml {
        cfg.lambda_ml = v;
    }
    if let Some(v) = file_cfg.seed {
        cfg.seed = v;
    }
    if let Some(a) = &file_cfg.ablation {
        cfg.ablation = AblationMode::from_flag(a)?;
    }
    set(&mut cfg.model.seq_len, args.seq_len);
    set(&mut cfg.batch_size, args.batch_size);
    set(&mut cfg.stage1_steps, args.stage1_steps);
    set(&mut cfg.stage2_steps, args.stage2_steps);
    set(&mut cfg.joint_steps, args.joint_steps);
    if let Some(v) = args.lambda_ml {
        cfg.lambda_ml = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(a) = &args.ablation {
        cfg.ablation = AblationMode::from_flag(a)?;
    }

    let drop = split_drop_columns(&args.drop_columns);
    let ds = data::load_windows_auto(
        &args.data,
        cfg.model.seq_len,
        args.train_frac,
        cfg.seed,
        &drop,
    )?;
    cfg.model.features = ds.features;
    cfg.model.noise_dim = file_cfg.noise_dim.unwrap_or(ds.features);

    let metrics_path = args.out_ckpt.with_extension("metrics.jsonl");
    let mut log = MetricsLog::to_file(&metrics_path)?;
    let mut trainer = Trainer::new(cfg.clone())?;
    eprintln!(
        "training ablation '{}' on {} windows ({} train / {} test)",
        cfg.ablation.flag(),
        ds.n,
        ds.train_idx.len(),
        ds.test_idx.len()
    );
    trainer.train(&ds, &mut log)?;
    let state = trainer.rng_state();
    train::save_checkpoint(&args.out_ckpt, &trainer.model, &trainer.cfg, &state)?;
    write_manifest(
        &args.out_ckpt,
        "train",
        serde_json::to_value(&trainer.cfg).unwrap(),
        &[trainer.cfg.seed],
        &[&args.data],
        &[&args.out_ckpt, &metrics_path],
    )?;
    println!("checkpoint written to {}", args.out_ckpt.display());
    Ok(())
}

fn cmd_synthesize(ckpt: &Path, n: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    let loaded = train::load_checkpoint(ckpt)?;
    let batch = Trainer::synthesize(&loaded.model, n, seed)?;
    data::export_synthetic(out, &batch)?;
    write_manifest(
        out,
        "synthesize",
        serde_json::to_value(&loaded.config).unwrap(),
        &[seed],
        &[ckpt],
        &[out],
    )?;
    println!("wrote {} synthetic samples to {}", n, out.display());
    Ok(())
}

struct EvalArgs {
    real: PathBuf,
    synth: PathBuf,
    metrics: String,
    runs: usize,
    seed: u64,
    out: PathBuf,
    seq_len: usize,
    train_frac: f64,
    drop_columns: Option<String>,
    posthoc_steps: usize,
    plot_dir: Option<PathBuf>,
}

fn cmd_evaluate(args: EvalArgs) -> Result<()> {
    if args.runs == 0 {
        return Err(Error::Config("--runs must be positive".into()));
    }
    let requested: Vec<&str> = args.metrics.split(',').map(|s| s.trim()).collect();
    for m in &requested {
        if !["predictive", "discriminative", "tsne", "tsne-diff"].contains(m) {
            return Err(Error::Config(format!(
                "unknown metric '{m}' (expected predictive|discriminative|tsne|tsne-diff)"
            )));
        }
    }
    let drop = split_drop_columns(&args.drop_columns);
    let real_ds = data::load_windows_auto(
        &args.real,
        args.seq_len,
        args.train_frac,
        args.seed,
        &drop,
    )?;
    let synth = data::import_synthetic(&args.synth)?;
    if synth.features != real_ds.features || synth.seq_len != real_ds.seq_len {
        return Err(Error::Data(format!(
            "synthetic windows [{}x{}] do not match real windows [{}x{}]",
            synth.seq_len, synth.features, real_ds.seq_len, real_ds.features
        )));
    }
    let real_all = real_ds.batch_from_indices(&(0..real_ds.n).collect::<Vec<_>>());
    let real_test = real_ds.test_batchset();

    let run_seeds: Vec<u64> = (0..args.runs)
        .map(|r| derive_seed(args.seed, r as u64))
        .collect();
    let posthoc = eval::PosthocConfig {
        train_steps: args.posthoc_steps,
        ..eval::PosthocConfig::default()
    };

    let mut report = serde_json::Map::new();
    report.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
    let plot_dir = args
        .plot_dir
        .clone()
        .unwrap_or_else(|| args.out.parent().unwrap_or(Path::new(".")).to_path_buf());
    let mut outputs: Vec<PathBuf> = vec![args.out.clone()];

    for metric in &requested {
        match *metric {
            "predictive" => {
                let rep = eval::predictive_score(&synth, &real_test, &run_seeds, &posthoc)?;
                println!("predictive score: {:.4} ± {:.4}", rep.mean, rep.std);
                report.insert("predictive".into(), serde_json::to_value(&rep).unwrap());
            }
            "discriminative" => {
                let rep = eval::discriminative_score(&real_all, &synth, &run_seeds, &posthoc)?;
                println!("discriminative score: {:.4} ± {:.4}", rep.mean, rep.std);
                report.insert("discriminative".into(), serde_json::to_value(&rep).unwrap());
            }
            "tsne" | "tsne-diff" => {
                let diff = *metric == "tsne-diff";
                let (r, s) = if diff {
                    (
                        eval::first_difference(&real_all),
                        eval::first_difference(&synth),
                    )
                } else {
                    (real_all.clone(), synth.clone())
                };
                let cfg = tsne::TsneConfig {
                    seed: derive_seed(args.seed, if diff { 102 } else { 101 }),
                    ..tsne::TsneConfig::default()
                };
                let emb = tsne::tsne_embed(&r, &s, &cfg)?;
                let stem = if diff { "tsne_diff" } else { "tsne" };
                let csv = plot_dir.join(format!("{stem}.csv"));
                let png = plot_dir.join(format!("{stem}.png"));
                tsne::export_plot(&emb, &csv, Some(&png))?;
                println!("{stem}: final KL {:.4}, points in {}", emb.kl, csv.display());
                report.insert(
                    (*stem).into(),
                    serde_json::json!({
                        "kl": emb.kl,
                        "points": emb.points.len(),
                        "csv": csv.display().to_string(),
                        "png": png.display().to_string(),
                    }),
                );
                outputs.push(csv);
                outputs.push(png);
            }
            _ => unreachable!(),
        }
    }

    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&serde_json::Value::Object(report)).unwrap(),
    )
    .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let output_refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_manifest(
        &args.out,
        "evaluate",
        serde_json::json!({
            "metrics": requested,
            "runs": args.runs,
            "posthoc_steps": args.posthoc_steps,
            "seq_len": args.seq_len,
        }),
        &run_seeds,
        &[&args.real, &args.synth],
        &output_refs,
    )?;
    Ok(())
}

fn cmd_gradcheck(probes: usize, seed: u64, corrupt: Option<&str>) -> Result<()> {
    let mut reports = tstgan::gradcheck::run_primitive_suite(seed, probes, corrupt);
    println!("primitives:");
    for r in &reports {
        println!("  {}", r.line());
    }
    let composite = tstgan::gradcheck::run_composite_suite(seed, probes);
    println!("composed paths and losses:");
    for r in &composite {
        println!("  {}", r.line());
    }
    reports.extend(composite);
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        println!("all {} checks passed", reports.len());
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient checks failed: {}",
            failed.join(", ")
        )))
    }
}
