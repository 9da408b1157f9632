use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        features: 3,
        noise_dim: 3,
        model_dim: 8,
        heads: 2,
        ff_hidden: 16,
        layers: 2,
        seq_len: 6,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_batch(r: &mut ChaCha8Rng, b: usize, t: usize, m: usize) -> Tensor<f32> {
    let data: Vec<f32> = (0..b * t * m).map(|_| r.gen_range(0.0..1.0)).collect();
    Tensor::new(&[b, t, m], data)
}

// Loop-based scalar oracles, independent of the tape path.

fn oracle_loss_s(x: &[f32], xh: &[f32], b: usize, t: usize, m: usize) -> f32 {
    let mut acc = 0.0f64;
    for i in 0..b {
        let mut seq = 0.0f64;
        for ti in 0..t - 1 {
            let mut ss = 0.0f64;
            for f in 0..m {
                let d = x[(i * t + ti + 1) * m + f] as f64 - xh[(i * t + ti) * m + f] as f64;
                ss += d * d;
            }
            seq += ss.sqrt();
        }
        acc += seq / (t - 1) as f64;
    }
    (acc / b as f64) as f32
}

fn oracle_mm(x: &[f32], xb: &[f32], mask: &[bool], b: usize, t: usize, m: usize) -> f32 {
    let mut acc = 0.0f64;
    for i in 0..b {
        let mut seq = 0.0f64;
        let mut count = 0usize;
        for ti in 0..t {
            if !mask[i * t + ti] {
                continue;
            }
            count += 1;
            let mut ss = 0.0f64;
            for f in 0..m {
                let d = x[(i * t + ti) * m + f] as f64 - xb[(i * t + ti) * m + f] as f64;
                ss += d * d;
            }
            seq += ss.sqrt();
        }
        acc += seq / count as f64;
    }
    (acc / b as f64) as f32
}

fn oracle_moment(x: &[f32], y: &[f32], b: usize, t: usize, m: usize) -> f32 {
    let stats = |v: &[f32], i: usize, f: usize| {
        let mut mu = 0.0f64;
        for ti in 0..t {
            mu += v[(i * t + ti) * m + f] as f64;
        }
        mu /= t as f64;
        let mut var = 0.0f64;
        for ti in 0..t {
            let d = v[(i * t + ti) * m + f] as f64 - mu;
            var += d * d;
        }
        (mu, (var / t as f64).sqrt())
    };
    let mut acc = 0.0f64;
    for i in 0..b {
        for f in 0..m {
            let (mu_r, sd_r) = stats(x, i, f);
            let (mu_s, sd_s) = stats(y, i, f);
            acc += (mu_r - mu_s).abs() + (sd_r - sd_s).abs();
        }
    }
    (acc / (b * m) as f64) as f32
}

#[test]
fn supervised_loss_ignores_final_prediction() {
    let tape = Tape::<f32>::inference();
    let x = Tensor::new(&[1, 3, 1], vec![1.0, 2.0, 3.0]);
    let xh = Tensor::new(&[1, 3, 1], vec![2.0, 3.0, 99.0]);
    let loss = loss_supervised(&tape, &x, &xh);
    assert_eq!(loss.item(), 0.0);
}

#[test]
fn supervised_loss_single_step_error_is_halved() {
    // T = 3: one step with error norm e, the other exact → e / 2.
    let tape = Tape::<f32>::inference();
    let x = Tensor::new(&[1, 3, 2], vec![0.1, 0.2, 0.5, 0.5, 0.9, 0.4]);
    // x̂[0] = x[1] exactly; x̂[1] = x[2] + (0.3, 0.4) → norm 0.5.
    let xh = Tensor::new(&[1, 3, 2], vec![0.5, 0.5, 1.2, 0.8, 0.0, 0.0]);
    let loss = loss_supervised(&tape, &x, &xh);
    assert!((loss.item() - 0.25).abs() < 1e-6, "loss = {}", loss.item());
}

#[test]
fn supervised_loss_matches_loop_oracle() {
    let mut r = rng(1);
    for _ in 0..5 {
        let (b, t, m) = (4, 7, 3);
        let x = random_batch(&mut r, b, t, m);
        let xh = random_batch(&mut r, b, t, m);
        let tape = Tape::<f32>::inference();
        let got = loss_supervised(&tape, &x, &xh).item();
        let want = oracle_loss_s(&x.data(), &xh.data(), b, t, m);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn mm_loss_zero_when_masked_positions_match() {
    let tape = Tape::<f32>::inference();
    let x = Tensor::new(&[1, 3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    // Differs only at the unmasked position 0.
    let xb = Tensor::new(&[1, 3, 2], vec![9.0, 9.0, 0.3, 0.4, 0.5, 0.6]);
    let mask = [false, true, true];
    let loss = mm_loss(&tape, &x, &xb, &mask);
    assert_eq!(loss.item(), 0.0);
}

#[test]
fn mm_loss_single_masked_position_is_error_norm() {
    let tape = Tape::<f32>::inference();
    let x = Tensor::new(&[1, 3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    // Masked position 1 off by (0.3, 0.4): norm 0.5.
    let xb = Tensor::new(&[1, 3, 2], vec![0.1, 0.2, 0.6, 0.8, 0.5, 0.6]);
    let mask = [false, true, false];
    let loss = mm_loss(&tape, &x, &xb, &mask);
    assert!((loss.item() - 0.5).abs() < 1e-6);
}

#[test]
fn mm_loss_matches_loop_oracle() {
    let mut r = rng(2);
    for _ in 0..5 {
        let (b, t, m) = (3, 6, 2);
        let x = random_batch(&mut r, b, t, m);
        let xb = random_batch(&mut r, b, t, m);
        let mask: Vec<bool> = (0..b * t)
            .map(|i| i % t == 0 || r.gen_bool(0.4))
            .collect();
        let tape = Tape::<f32>::inference();
        let got = mm_loss(&tape, &x, &xb, &mask).item();
        let want = oracle_mm(&x.data(), &xb.data(), &mask, b, t, m);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn mm_gradient_is_zero_at_unmasked_positions() {
    let mut r = rng(3);
    let cfg = tiny_config();
    let model = TstGan::<f64>::new(&mut r, cfg.clone(), AblationMode::Full).unwrap();
    let tape = Tape::new();
    let data: Vec<f64> = (0..2 * cfg.seq_len * cfg.features)
        .map(|_| r.gen_range(0.0..1.0))
        .collect();
    let x = Tensor::new(&[2, cfg.seq_len, cfg.features], data);
    let mask: Vec<bool> = (0..2 * cfg.seq_len).map(|i| i % 3 == 0).collect();
    let (x_bar, loss) = model.masked_modelling(&tape, &x, &mask).unwrap();
    tape.backward(&loss);
    let g = x_bar.grad().expect("reconstruction gradient missing");
    for (pos, &masked) in mask.iter().enumerate() {
        for f in 0..cfg.features {
            let gv = g[pos * cfg.features + f];
            if masked {
                continue;
            }
            assert_eq!(gv, 0.0, "unmasked position {pos} leaked gradient {gv}");
        }
    }
    assert!(mask.iter().enumerate().any(|(pos, &m)| {
        m && (0..cfg.features).any(|f| g[pos * cfg.features + f] != 0.0)
    }));
}

#[test]
fn gan_d_loss_spot_values() {
    let tape = Tape::<f32>::inference();
    let ones = Tensor::new(&[4, 1], vec![1.0; 4]);
    let zeros = Tensor::new(&[4, 1], vec![0.0; 4]);
    let halves = Tensor::new(&[4, 1], vec![0.5; 4]);
    assert_eq!(loss_gan_d(&tape, &ones, &zeros).item(), 0.0);
    assert!((loss_gan_d(&tape, &halves, &halves).item() - 0.5).abs() < 1e-7);
    assert!((loss_gan_d(&tape, &zeros, &ones).item() - 2.0).abs() < 1e-7);
}

#[test]
fn gan_g_loss_spot_values() {
    let tape = Tape::<f32>::inference();
    let at = |v: f32| Tensor::new(&[3, 1], vec![v; 3]);
    assert_eq!(loss_gan_g(&tape, &at(1.0)).item(), 0.0);
    assert!((loss_gan_g(&tape, &at(0.0)).item() - 0.5).abs() < 1e-7);
    assert!((loss_gan_g(&tape, &at(-1.0)).item() - 2.0).abs() < 1e-7);
}

#[test]
fn moment_loss_identical_batches_is_zero() {
    let mut r = rng(4);
    let x = random_batch(&mut r, 3, 5, 2);
    let tape = Tape::<f32>::inference();
    assert_eq!(loss_moment(&tape, &x, &x).item(), 0.0);
}

#[test]
fn moment_loss_constant_sequences_reduce_to_mean_gap() {
    let tape = Tape::<f32>::inference();
    let a = Tensor::new(&[1, 4, 1], vec![0.3; 4]);
    let b = Tensor::new(&[1, 4, 1], vec![0.8; 4]);
    let loss = loss_moment(&tape, &a, &b);
    assert!((loss.item() - 0.5).abs() < 1e-6);
}

#[test]
fn moment_loss_matches_loop_oracle() {
    let mut r = rng(5);
    for _ in 0..5 {
        let (b, t, m) = (4, 6, 3);
        let x = random_batch(&mut r, b, t, m);
        let y = random_batch(&mut r, b, t, m);
        let tape = Tape::<f32>::inference();
        let got = loss_moment(&tape, &x, &y).item();
        let want = oracle_moment(&x.data(), &y.data(), b, t, m);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn embedder_path_is_causal_at_last_position() {
    let mut r = rng(6);
    let cfg = tiny_config();
    let model = TstGan::<f32>::new(&mut r, cfg.clone(), AblationMode::Full).unwrap();
    let tape = Tape::inference();
    let base = random_batch(&mut r, 1, cfg.seq_len, cfg.features);
    let mut bumped = base.to_vec();
    let last = (cfg.seq_len - 1) * cfg.features;
    for v in &mut bumped[last..] {
        *v += 0.5;
    }
    let x2 = Tensor::new(&[1, cfg.seq_len, cfg.features], bumped);
    let (_, xh1) = model.embed_and_predict(&tape, &base).unwrap();
    let (_, xh2) = model.embed_and_predict(&tape, &x2).unwrap();
    assert_eq!(xh1.shape(), vec![1, cfg.seq_len, cfg.features]);
    let (a, b) = (xh1.to_vec(), xh2.to_vec());
    assert_eq!(&a[..last], &b[..last], "prediction before T changed");
    assert_ne!(&a[last..], &b[last..], "prediction at T should change");
}

#[test]
fn embed_and_predict_rejects_wrong_feature_dim() {
    let mut r = rng(7);
    let model = TstGan::<f32>::new(&mut r, tiny_config(), AblationMode::Full).unwrap();
    let tape = Tape::inference();
    let bad = Tensor::zeros(&[2, 6, 5]);
    assert!(matches!(
        model.embed_and_predict(&tape, &bad),
        Err(Error::Config(_))
    ));
}

#[test]
fn generation_is_deterministic_given_noise() {
    let mut r = rng(8);
    let cfg = tiny_config();
    let model = TstGan::<f32>::new(&mut r, cfg.clone(), AblationMode::Full).unwrap();
    let z: Vec<f32> = (0..2 * cfg.seq_len * cfg.noise_dim)
        .map(|i| ((i * 31 % 17) as f32) * 0.1 - 0.8)
        .collect();
    let zt = Tensor::new(&[2, cfg.seq_len, cfg.noise_dim], z);
    let a = model.generate(&Tape::inference(), &zt).unwrap().to_vec();
    let b = model.generate(&Tape::inference(), &zt).unwrap().to_vec();
    assert_eq!(a, b);
    assert_eq!(
        model.generate(&Tape::inference(), &zt).unwrap().shape(),
        vec![2, cfg.seq_len, cfg.features]
    );
}

#[test]
fn discriminator_scores_have_no_cross_sequence_coupling() {
    let mut r = rng(9);
    let cfg = tiny_config();
    let model = TstGan::<f32>::new(&mut r, cfg.clone(), AblationMode::Full).unwrap();
    let tape = Tape::inference();
    let batch = random_batch(&mut r, 3, cfg.seq_len, cfg.features);
    let scores = model.discriminate(&tape, &batch).unwrap();
    assert_eq!(scores.shape(), vec![3, 1]);
    // Reverse the batch; scores must permute identically.
    let data = batch.to_vec();
    let seq = cfg.seq_len * cfg.features;
    let mut reversed = Vec::with_capacity(data.len());
    for i in (0..3).rev() {
        reversed.extend_from_slice(&data[i * seq..(i + 1) * seq]);
    }
    let rev_scores = model
        .discriminate(&tape, &Tensor::new(&[3, cfg.seq_len, cfg.features], reversed))
        .unwrap()
        .to_vec();
    let fwd = scores.to_vec();
    assert_eq!(rev_scores, vec![fwd[2], fwd[1], fwd[0]]);
}

#[test]
fn predictor_is_shared_between_paths() {
    let mut r = rng(10);
    let cfg = tiny_config();
    let model = TstGan::<f32>::new(&mut r, cfg.clone(), AblationMode::Full).unwrap();
    let z = Tensor::new(
        &[1, cfg.seq_len, cfg.noise_dim],
        vec![0.1; cfg.seq_len * cfg.noise_dim],
    );
    let before = model.generate(&Tape::inference(), &z).unwrap().to_vec();
    // Mutate the predictor as the embedder-path optimizer would.
    let p = &model.predictor.as_ref().unwrap().proj.weight;
    let bumped: Vec<f32> = p.to_vec().iter().map(|v| v + 0.25).collect();
    p.copy_from(&bumped);
    let after = model.generate(&Tape::inference(), &z).unwrap().to_vec();
    assert_ne!(before, after, "generator path did not see predictor mutation");
}

#[test]
fn detached_fakes_leave_generator_without_gradients() {
    let mut r = rng(11);
    let cfg = tiny_config();
    let model = TstGan::<f32>::new(&mut r, cfg.clone(), AblationMode::Full).unwrap();
    let mut rr = rng(12);
    let real = random_batch(&mut rr, 2, cfg.seq_len, cfg.features);
    let z = random_batch(&mut rr, 2, cfg.seq_len, cfg.noise_dim);
    // Detach: generate on a non-recording tape, re-wrap as a constant.
    let fake = model.generate(&Tape::inference(), &z).unwrap();
    let tape = Tape::new();
    let sr = model.discriminate(&tape, &real).unwrap();
    let sf = model.discriminate(&tape, &fake).unwrap();
    let loss = loss_gan_d(&tape, &sr, &sf);
    tape.backward(&loss);
    for p in model.generator_params() {
        assert!(p.grad().is_none(), "generator parameter got gradient from detached fakes");
    }
    assert!(model
        .discriminator_params()
        .iter()
        .any(|p| p.grad().is_some()));
}

#[test]
fn ablation_wiring_matches_declared_parameter_groups() {
    let cfg = tiny_config();
    let groups = |mode: AblationMode| {
        let mut r = rng(13);
        let model = TstGan::<f32>::new(&mut r, cfg.clone(), mode).unwrap();
        let mut prefixes: Vec<String> = model
            .named_params()
            .iter()
            .map(|(n, _)| n.split('.').next().unwrap().to_string())
            .collect();
        prefixes.sort();
        prefixes.dedup();
        prefixes
    };
    assert_eq!(
        groups(AblationMode::Full),
        vec!["discriminator", "embedder", "generator", "predictor"]
    );
    assert_eq!(
        groups(AblationMode::NoEmbedding),
        vec!["discriminator", "generator", "predictor"]
    );
    assert_eq!(groups(AblationMode::Base), vec!["discriminator", "generator"]);
}

#[test]
fn no_mm_auto_generator_is_causal() {
    let mut r = rng(14);
    let cfg = tiny_config();
    let model = TstGan::<f32>::new(&mut r, cfg.clone(), AblationMode::NoMmAuto).unwrap();
    let tape = Tape::inference();
    let mut rr = rng(15);
    let base = random_batch(&mut rr, 1, cfg.seq_len, cfg.noise_dim);
    let mut bumped = base.to_vec();
    let last = (cfg.seq_len - 1) * cfg.noise_dim;
    for v in &mut bumped[last..] {
        *v += 1.0;
    }
    let z2 = Tensor::new(&[1, cfg.seq_len, cfg.noise_dim], bumped);
    let a = model.generate(&tape, &base).unwrap().to_vec();
    let b = model.generate(&tape, &z2).unwrap().to_vec();
    let keep = (cfg.seq_len - 1) * cfg.features;
    assert_eq!(&a[..keep], &b[..keep], "causal generator leaked future noise");
}

#[test]
fn mask_vector_absent_in_modes_without_masked_modelling() {
    let cfg = tiny_config();
    for mode in [AblationMode::NoMm, AblationMode::NoMmAuto, AblationMode::Base] {
        let mut r = rng(16);
        let model = TstGan::<f32>::new(&mut r, cfg.clone(), mode).unwrap();
        let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
        assert!(
            !names.iter().any(|n| n.contains("mask_vector")),
            "{mode:?} should not own a MASK vector"
        );
    }
}
