use super::*;
use crate::data::generate_sines;
use crate::model::AblationMode;
use crate::tensor::Tensor;

fn small_cfg(mode: AblationMode) -> TrainConfig {
    let mut cfg = TrainConfig::with_features(3);
    cfg.model.model_dim = 8;
    cfg.model.heads = 2;
    cfg.model.ff_hidden = 16;
    cfg.model.layers = 2;
    cfg.model.seq_len = 8;
    cfg.model.noise_dim = 3;
    cfg.ablation = mode;
    cfg.batch_size = 8;
    cfg.stage1_steps = 3;
    cfg.stage2_steps = 3;
    cfg.joint_steps = 2;
    cfg.seed = 17;
    cfg
}

fn small_data(seed: u64) -> crate::data::WindowedDataset {
    generate_sines(40, 8, 3, 0.8, seed).unwrap()
}

fn snapshot(params: &[Tensor<f32>]) -> Vec<f32> {
    params.iter().flat_map(|p| p.to_vec()).collect()
}

#[test]
fn stage1_touches_only_embedder_and_predictor() {
    let data = small_data(1);
    let mut tr = Trainer::new(small_cfg(AblationMode::Full)).unwrap();
    let g_before = snapshot(&tr.model.generator_params());
    let d_before = snapshot(&tr.model.discriminator_params());
    let e_before = snapshot(&tr.model.embedder_params());
    for step in 1..=3 {
        tr.stage1_step(&data, step).unwrap();
    }
    assert_eq!(g_before, snapshot(&tr.model.generator_params()));
    assert_eq!(d_before, snapshot(&tr.model.discriminator_params()));
    assert_ne!(e_before, snapshot(&tr.model.embedder_params()));
}

#[test]
fn stage1_loss_curve_is_reproducible() {
    let data = small_data(2);
    let run = || {
        let mut tr = Trainer::new(small_cfg(AblationMode::Full)).unwrap();
        (1..=4)
            .map(|s| tr.stage1_step(&data, s).unwrap())
            .collect::<Vec<f32>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn stage2_leaves_predictor_and_discriminator_untouched() {
    let data = small_data(3);
    let mut tr = Trainer::new(small_cfg(AblationMode::Full)).unwrap();
    let p_before = tr.model.predictor_snapshot();
    let d_before = snapshot(&tr.model.discriminator_params());
    for step in 1..=3 {
        tr.stage2_step(&data, step).unwrap();
    }
    assert_eq!(p_before, tr.model.predictor_snapshot());
    assert_eq!(d_before, snapshot(&tr.model.discriminator_params()));
}

#[test]
fn predictor_gate_holds_across_joint_substeps() {
    let data = small_data(4);
    let mut tr = Trainer::new(small_cfg(AblationMode::Full)).unwrap();
    let before = tr.model.predictor_snapshot();
    tr.joint_substep_d(&data, 1).unwrap();
    assert_eq!(before, tr.model.predictor_snapshot(), "D step moved the predictor");
    tr.joint_substep_g(&data, 1).unwrap();
    assert_eq!(before, tr.model.predictor_snapshot(), "G step moved the predictor");
    tr.joint_substep_aux(&data, 1).unwrap();
    assert_eq!(before, tr.model.predictor_snapshot(), "aux step moved the predictor");
    tr.joint_substep_sup(&data, 1).unwrap();
    assert_ne!(before, tr.model.predictor_snapshot(), "supervised step must move it");
}

#[test]
fn generator_flow_through_gradients_are_nonzero_in_gan_step() {
    let data = small_data(5);
    let mut tr = Trainer::new(small_cfg(AblationMode::Full)).unwrap();
    tr.joint_substep_g(&data, 1).unwrap();
    // After the G sub-step, generator input-projection gradients exist and
    // are not all zero (flow through the frozen predictor confirmed).
    let g = tr.model.generator.noise_proj.weight.grad().expect("no gradient");
    assert!(g.iter().any(|&v| v != 0.0));
    let p = &tr.model.predictor.as_ref().unwrap().proj.weight;
    assert!(p.grad().is_some(), "predictor should receive gradients");
}

#[test]
fn no_embedding_updates_predictor_with_generator() {
    let data = small_data(6);
    let mut tr = Trainer::new(small_cfg(AblationMode::NoEmbedding)).unwrap();
    let before = tr.model.predictor_snapshot();
    tr.joint_substep_g(&data, 1).unwrap();
    assert_ne!(before, tr.model.predictor_snapshot());
}

#[test]
fn lambda_zero_matches_no_ml_bit_for_bit() {
    let data = small_data(7);
    let mut cfg_a = small_cfg(AblationMode::Full);
    cfg_a.lambda_ml = 0.0;
    let cfg_b = {
        let mut c = small_cfg(AblationMode::NoMl);
        c.lambda_ml = 1.0; // ignored: mode drops the loss
        c
    };
    let mut log = MetricsLog::sink();
    let mut tr_a = Trainer::new(cfg_a).unwrap();
    let mut tr_b = Trainer::new(cfg_b).unwrap();
    tr_a.train(&data, &mut log).unwrap();
    tr_b.train(&data, &mut log).unwrap();
    let a: Vec<f32> = tr_a.model.named_params().iter().flat_map(|(_, p)| p.to_vec()).collect();
    let b: Vec<f32> = tr_b.model.named_params().iter().flat_map(|(_, p)| p.to_vec()).collect();
    assert_eq!(a, b);
}

#[test]
fn full_training_is_bitwise_deterministic() {
    let data = small_data(8);
    let run = || {
        let mut tr = Trainer::new(small_cfg(AblationMode::Full)).unwrap();
        tr.train(&data, &mut MetricsLog::sink()).unwrap();
        tr.model
            .named_params()
            .iter()
            .flat_map(|(_, p)| p.to_vec())
            .collect::<Vec<f32>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let data = small_data(9);
    let mut tr = Trainer::new(small_cfg(AblationMode::Full)).unwrap();
    for step in 1..=2 {
        tr.stage1_step(&data, step).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.tstg");
    let p2 = dir.path().join("b.tstg");
    let state = tr.rng_state();
    save_checkpoint(&p1, &tr.model, &tr.cfg, &state).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&p2, &loaded.model, &loaded.config, &loaded.rng_state).unwrap();
    let a = std::fs::read(&p1).unwrap();
    let b = std::fs::read(&p2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn loaded_model_synthesizes_identically() {
    let cfg = small_cfg(AblationMode::Full);
    let tr = Trainer::new(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tstg");
    save_checkpoint(&path, &tr.model, &tr.cfg, &tr.rng_state()).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let a = Trainer::synthesize(&tr.model, 5, 42).unwrap();
    let b = Trainer::synthesize(&loaded.model, 5, 42).unwrap();
    assert_eq!(a, b);
}

#[test]
fn truncated_checkpoint_is_rejected_cleanly() {
    let cfg = small_cfg(AblationMode::Full);
    let tr = Trainer::new(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tstg");
    save_checkpoint(&path, &tr.model, &tr.cfg, &tr.rng_state()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.tstg");
    std::fs::write(&cut, &bytes[..bytes.len() - 64]).unwrap();
    match load_checkpoint(&cut) {
        Err(Error::CheckpointTruncated(_)) => {}
        other => panic!("expected truncation error, got {other:?}"),
    }
}

#[test]
fn bad_magic_and_version_are_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.tstg");
    std::fs::write(&p, b"NOPE----------------").unwrap();
    assert!(matches!(load_checkpoint(&p), Err(Error::CheckpointBadMagic)));
    let mut hdr = Vec::new();
    hdr.extend_from_slice(b"TSTG");
    hdr.extend_from_slice(&99u32.to_le_bytes());
    hdr.extend_from_slice(&0u64.to_le_bytes());
    std::fs::write(&p, &hdr).unwrap();
    assert!(matches!(
        load_checkpoint(&p),
        Err(Error::CheckpointBadVersion(99))
    ));
}

#[test]
fn checkpoint_name_sets_follow_ablation_wiring() {
    let dir = tempfile::tempdir().unwrap();
    for mode in AblationMode::all() {
        let cfg = small_cfg(mode);
        let tr = Trainer::new(cfg).unwrap();
        let path = dir.path().join(format!("{}.tstg", mode.flag()));
        save_checkpoint(&path, &tr.model, &tr.cfg, &tr.rng_state()).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let names: Vec<String> = loaded.model.named_params().iter().map(|(n, _)| n.clone()).collect();
        let has = |p: &str| names.iter().any(|n| n.starts_with(p));
        assert_eq!(has("embedder."), mode.has_embedder(), "{mode:?}");
        assert_eq!(has("predictor."), mode.has_predictor(), "{mode:?}");
        assert!(has("generator.") && has("discriminator."), "{mode:?}");
        if mode == AblationMode::Base {
            assert!(has("generator.out_proj"), "base needs its own output head");
        }
    }
}

#[test]
fn tampered_feature_dim_is_rejected_at_load() {
    let cfg = small_cfg(AblationMode::Full);
    let tr = Trainer::new(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tstg");
    save_checkpoint(&path, &tr.model, &tr.cfg, &tr.rng_state()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest = String::from_utf8(bytes[16..16 + manifest_len].to_vec()).unwrap();
    let tampered = manifest.replacen("\"features\":3", "\"features\":4", 1);
    assert_ne!(manifest, tampered);
    let mut out = Vec::new();
    out.extend_from_slice(&bytes[..8]);
    out.extend_from_slice(&(tampered.len() as u64).to_le_bytes());
    out.extend_from_slice(tampered.as_bytes());
    out.extend_from_slice(&bytes[16 + manifest_len..]);
    let bad = dir.path().join("bad.tstg");
    std::fs::write(&bad, &out).unwrap();
    match load_checkpoint(&bad) {
        Err(Error::CheckpointMalformed(msg)) => {
            assert!(msg.contains("shape"), "{msg}");
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn metrics_log_records_stages_in_order() {
    let data = small_data(10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    let mut cfg = small_cfg(AblationMode::Full);
    cfg.stage1_steps = 2;
    cfg.stage2_steps = 2;
    cfg.joint_steps = 1;
    let mut tr = Trainer::new(cfg).unwrap();
    let mut log = MetricsLog::to_file(&path).unwrap();
    tr.train(&data, &mut log).unwrap();
    drop(log);
    let content = std::fs::read_to_string(&path).unwrap();
    let stages: Vec<String> = content
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["stage"]
            .as_str()
            .unwrap()
            .to_string())
        .collect();
    assert_eq!(stages, vec!["stage1", "stage1", "stage2", "stage2", "joint"]);
    assert!(content.lines().last().unwrap().contains("loss_s"));
}

#[test]
fn divergence_guard_reports_numerical_error() {
    let data = small_data(11);
    let mut tr = Trainer::new(small_cfg(AblationMode::Full)).unwrap();
    // Poison one embedder weight so the supervised loss goes non-finite.
    let p = &tr.model.embedder.as_ref().unwrap().input_proj.weight;
    let n = p.numel();
    p.copy_from(&vec![f32::NAN; n]);
    match tr.stage1_step(&data, 1) {
        Err(Error::Numerical(msg)) => assert!(msg.contains("stage1")),
        other => panic!("expected numerical failure, got {other:?}"),
    }
}
