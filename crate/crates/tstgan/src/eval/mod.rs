//! Evaluation harness: train-on-synthetic/test-on-real predictive score,
//! post-hoc discriminative score, first differences and t-SNE diagnostics.
//!
//! Post-hoc networks are two-layer GRUs with hidden size equal to the data
//! feature dimension. Runs are independent and seeded, so a report is
//! reproducible from its recorded seeds, and the run loop may execute in
//! parallel without changing any value.

pub mod tsne;

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::nn::{Adam, GruNetwork};
use crate::rng::{self, stream_rng};
use crate::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Post-hoc training budget. The budget is fixed up front; scores are
/// comparable only under the same config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocConfig {
    pub train_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gru_layers: usize,
}

impl Default for PosthocConfig {
    fn default() -> Self {
        PosthocConfig {
            train_steps: 2_000,
            batch_size: 128,
            lr: 0.001,
            gru_layers: 2,
        }
    }
}

/// Aggregated metric over `n_runs` independent runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub n_runs: usize,
    pub run_values: Vec<f64>,
    pub run_seeds: Vec<u64>,
    pub config: PosthocConfig,
}

impl ScoreReport {
    fn aggregate(
        metric: &str,
        run_values: Vec<f64>,
        run_seeds: &[u64],
        config: &PosthocConfig,
    ) -> Self {
        let n = run_values.len();
        // Identical runs (equal seeds) must report exactly zero spread;
        // naive mean/variance would leave rounding dust.
        let (mean, var) = if run_values.windows(2).all(|w| w[0] == w[1]) {
            (run_values[0], 0.0)
        } else {
            let mean = run_values.iter().sum::<f64>() / n as f64;
            let var =
                run_values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            (mean, var)
        };
        ScoreReport {
            metric: metric.to_string(),
            mean,
            std: var.sqrt(),
            n_runs: n,
            run_values,
            run_seeds: run_seeds.to_vec(),
            config: config.clone(),
        }
    }
}

fn slice_windows(set: &SequenceBatch, idx: &[usize]) -> SequenceBatch {
    let len = set.seq_len * set.features;
    let mut data = Vec::with_capacity(idx.len() * len);
    for &i in idx {
        data.extend_from_slice(set.window(i));
    }
    SequenceBatch::new(data, idx.len(), set.seq_len, set.features)
}

/// Inputs `[B, T-1, m]` (all features up to the penultimate step) and
/// targets `[B, T-1, 1]` (last feature, one step ahead).
fn one_step_pairs(set: &SequenceBatch, idx: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
    let (t, m) = (set.seq_len, set.features);
    let b = idx.len();
    let mut x = Vec::with_capacity(b * (t - 1) * m);
    let mut y = Vec::with_capacity(b * (t - 1));
    for &i in idx {
        let w = set.window(i);
        x.extend_from_slice(&w[..(t - 1) * m]);
        for step in 1..t {
            y.push(w[step * m + (m - 1)]);
        }
    }
    (
        Tensor::new(&[b, t - 1, m], x),
        Tensor::new(&[b, t - 1, 1], y),
    )
}

/// One predictive run: train a fresh GRU regressor on synthetic windows to
/// predict the last feature one step ahead from all features, then report
/// MAE on the held-out real windows.
fn predictive_run(
    synth: &SequenceBatch,
    real_test: &SequenceBatch,
    seed: u64,
    cfg: &PosthocConfig,
) -> f64 {
    let m = synth.features;
    let mut rng = stream_rng(seed, rng::stream::EVAL_RUN_BASE);
    let net = GruNetwork::<f32>::new(&mut rng, m, m, cfg.gru_layers, 1);
    let mut opt = Adam::new(net.params(), cfg.lr, 0.9, 0.999);
    for _ in 0..cfg.train_steps {
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.gen_range(0..synth.batch))
            .collect();
        let (x, y) = one_step_pairs(synth, &idx);
        opt.zero_grads();
        let tape = Tape::new();
        let out = tape.sigmoid(&net.forward(&tape, &x));
        let loss = tape.mean(&tape.abs(&tape.sub(&out, &y)));
        tape.backward(&loss);
        opt.step();
    }
    // MAE on the real test windows, in chunks.
    let mut total = 0.0f64;
    let mut count = 0usize;
    let all: Vec<usize> = (0..real_test.batch).collect();
    for chunk in all.chunks(512) {
        let (x, y) = one_step_pairs(real_test, chunk);
        let tape = Tape::inference();
        let out = tape.sigmoid(&net.forward(&tape, &x));
        let diff = tape.abs(&tape.sub(&out, &y));
        total += diff.data().iter().map(|&v| v as f64).sum::<f64>();
        count += diff.numel();
    }
    total / count as f64
}

/// Predictive score (train on synthetic, test on real): MAE of a post-hoc
/// one-step-ahead forecaster, aggregated over runs.
pub fn predictive_score(
    synth: &SequenceBatch,
    real_test: &SequenceBatch,
    run_seeds: &[u64],
    cfg: &PosthocConfig,
) -> Result<ScoreReport> {
    if synth.batch == 0 || real_test.batch == 0 {
        return Err(Error::Data("predictive score: empty window set".into()));
    }
    if synth.features != real_test.features || synth.seq_len != real_test.seq_len {
        return Err(Error::Data(format!(
            "predictive score: synthetic [{}x{}] vs real [{}x{}] window shapes differ",
            synth.seq_len, synth.features, real_test.seq_len, real_test.features
        )));
    }
    if run_seeds.is_empty() {
        return Err(Error::Config("predictive score: need at least one run seed".into()));
    }
    if synth.seq_len < 2 {
        return Err(Error::Data("predictive score: windows shorter than 2 steps".into()));
    }
    let values: Vec<f64> = run_seeds
        .par_iter()
        .map(|&s| predictive_run(synth, real_test, s, cfg))
        .collect();
    Ok(ScoreReport::aggregate("predictive", values, run_seeds, cfg))
}

fn discriminative_run(
    real: &SequenceBatch,
    synth: &SequenceBatch,
    seed: u64,
    cfg: &PosthocConfig,
) -> Result<f64> {
    let m = real.features;
    let mut rng = stream_rng(seed, rng::stream::EVAL_RUN_BASE);
    // Equal numbers of real and synthetic samples.
    let n = real.batch.min(synth.batch);
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, total: usize| {
        let mut idx: Vec<usize> = (0..total).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx
    };
    let idx_r = pick(&mut rng, real.batch);
    let idx_s = pick(&mut rng, synth.batch);
    let train_n = ((n as f64) * 0.8).round() as usize;
    let train_n = train_n.clamp(1, n - 1);
    if n < 5 || train_n == 0 || n - train_n == 0 {
        return Err(Error::Data(format!(
            "discriminative score: {n} samples per class cannot give balanced splits"
        )));
    }
    let real_train = slice_windows(real, &idx_r[..train_n]);
    let real_test = slice_windows(real, &idx_r[train_n..]);
    let synth_train = slice_windows(synth, &idx_s[..train_n]);
    let synth_test = slice_windows(synth, &idx_s[train_n..]);

    let net = GruNetwork::<f32>::new(&mut rng, m, m, cfg.gru_layers, 1);
    let mut opt = Adam::new(net.params(), cfg.lr, 0.9, 0.999);
    let classify = |tape: &Tape<f32>, windows: &Tensor<f32>| {
        let h = net.hidden_states(tape, windows, None);
        let t = windows.shape()[1];
        let last = tape.reshape(&tape.slice(&h, 1, t - 1, 1), &[windows.shape()[0], m]);
        net.head.forward(tape, &last)
    };
    for _ in 0..cfg.train_steps {
        // Mixed batch: half labelled real (1), half synthetic (0).
        let half = (cfg.batch_size / 2).max(1);
        let mut data = Vec::with_capacity(2 * half * real.seq_len * m);
        let mut labels = Vec::with_capacity(2 * half);
        for _ in 0..half {
            let w = real_train.window(rng.gen_range(0..real_train.batch));
            data.extend_from_slice(w);
            labels.push(1.0f32);
        }
        for _ in 0..half {
            let w = synth_train.window(rng.gen_range(0..synth_train.batch));
            data.extend_from_slice(w);
            labels.push(0.0f32);
        }
        let x = Tensor::new(&[2 * half, real.seq_len, m], data);
        let y = Tensor::new(&[2 * half, 1], labels);
        opt.zero_grads();
        let tape = Tape::new();
        let logits = classify(&tape, &x);
        let d = tape.sub(&logits, &y);
        let loss = tape.mean(&tape.mul(&d, &d));
        tape.backward(&loss);
        opt.step();
    }
    // Held-out accuracy; a window is called real when the logit clears 0.5.
    let mut correct = 0usize;
    let mut total = 0usize;
    for (set, is_real) in [(&real_test, true), (&synth_test, false)] {
        let tape = Tape::inference();
        let logits = classify(&tape, &set.to_tensor());
        for &v in logits.data().iter() {
            if (v > 0.5) == is_real {
                correct += 1;
            }
            total += 1;
        }
    }
    let acc = correct as f64 / total as f64;
    Ok((acc - 0.5).abs())
}

/// Discriminative score: a post-hoc GRU classifier is trained to separate
/// real from synthetic windows (equal counts, 80/20 split per class); the
/// score is `|held-out accuracy − 0.5|`, so indistinguishable data scores 0.
pub fn discriminative_score(
    real: &SequenceBatch,
    synth: &SequenceBatch,
    run_seeds: &[u64],
    cfg: &PosthocConfig,
) -> Result<ScoreReport> {
    if real.batch == 0 || synth.batch == 0 {
        return Err(Error::Data("discriminative score: empty window set".into()));
    }
    if real.features != synth.features || real.seq_len != synth.seq_len {
        return Err(Error::Data(format!(
            "discriminative score: real [{}x{}] vs synthetic [{}x{}] window shapes differ",
            real.seq_len, real.features, synth.seq_len, synth.features
        )));
    }
    if run_seeds.is_empty() {
        return Err(Error::Config(
            "discriminative score: need at least one run seed".into(),
        ));
    }
    let values: Vec<f64> = run_seeds
        .par_iter()
        .map(|&s| discriminative_run(real, synth, s, cfg))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScoreReport::aggregate("discriminative", values, run_seeds, cfg))
}

/// Consecutive deltas `Δx[t] = x[t+1] − x[t]`, used to diagnose temporal
/// dynamics: `[N, T, m] -> [N, T-1, m]`.
pub fn first_difference(set: &SequenceBatch) -> SequenceBatch {
    let (n, t, m) = (set.batch, set.seq_len, set.features);
    assert!(t >= 2, "first_difference: needs at least two steps, got {t}");
    let mut out = Vec::with_capacity(n * (t - 1) * m);
    for i in 0..n {
        let w = set.window(i);
        for step in 0..t - 1 {
            for f in 0..m {
                out.push(w[(step + 1) * m + f] - w[step * m + f]);
            }
        }
    }
    SequenceBatch::new(out, n, t - 1, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_sines;

    #[test]
    fn first_difference_hand_case() {
        let s = SequenceBatch::new(vec![1.0, 3.0, 6.0], 1, 3, 1);
        let d = first_difference(&s);
        assert_eq!(d.data, vec![2.0, 3.0]);
        assert_eq!(d.seq_len, 2);
    }

    #[test]
    fn first_difference_of_constant_is_zero() {
        let s = SequenceBatch::new(vec![0.7; 10], 1, 5, 2);
        let d = first_difference(&s);
        assert!(d.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_difference_inverts_cumulative_sum() {
        let w = [0.2f32, -0.1, 0.4, 0.05];
        let mut cum = vec![0.0f32];
        for v in w {
            cum.push(cum.last().unwrap() + v);
        }
        let s = SequenceBatch::new(cum, 1, 5, 1);
        let d = first_difference(&s);
        for (a, e) in d.data.iter().zip(w.iter()) {
            assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn equal_run_seeds_give_zero_std() {
        let ds = generate_sines(60, 6, 2, 0.8, 3).unwrap();
        let real = ds.train_batchset();
        let synth = ds.test_batchset();
        let cfg = PosthocConfig {
            train_steps: 20,
            batch_size: 8,
            lr: 0.001,
            gru_layers: 2,
        };
        let rep = predictive_score(&synth, &real, &[9, 9, 9], &cfg).unwrap();
        assert_eq!(rep.std, 0.0);
        assert_eq!(rep.n_runs, 3);
        let rep = discriminative_score(&real, &synth, &[4, 4], &cfg).unwrap();
        assert_eq!(rep.std, 0.0);
    }

    #[test]
    fn trivially_separable_sets_score_near_half() {
        let ds = generate_sines(120, 6, 2, 0.8, 5).unwrap();
        let real = ds.train_batchset();
        // Offset 10 in scaled space: trivially separable.
        let shifted = SequenceBatch::new(
            real.data.iter().map(|v| v + 10.0).collect(),
            real.batch,
            real.seq_len,
            real.features,
        );
        let cfg = PosthocConfig {
            train_steps: 150,
            batch_size: 16,
            lr: 0.01,
            gru_layers: 2,
        };
        let rep = discriminative_score(&real, &shifted, &[1], &cfg).unwrap();
        assert!(rep.mean > 0.45, "expected near-perfect separation, got {}", rep.mean);
    }

    #[test]
    fn score_shape_mismatch_is_rejected() {
        let a = SequenceBatch::new(vec![0.0; 12], 2, 3, 2);
        let b = SequenceBatch::new(vec![0.0; 12], 2, 2, 3);
        assert!(predictive_score(&a, &b, &[1], &PosthocConfig::default()).is_err());
        assert!(discriminative_score(&a, &b, &[1], &PosthocConfig::default()).is_err());
    }

    #[test]
    fn discriminative_rejects_tiny_sets() {
        let a = SequenceBatch::new(vec![0.0; 12], 2, 3, 2);
        let err = discriminative_score(&a, &a, &[1], &PosthocConfig::default()).unwrap_err();
        assert!(err.to_string().contains("balanced"), "{err}");
    }

    #[test]
    fn report_serializes_with_mean_std_and_runs() {
        let rep = ScoreReport::aggregate(
            "predictive",
            vec![0.1, 0.2, 0.3],
            &[1, 2, 3],
            &PosthocConfig::default(),
        );
        let json = serde_json::to_value(&rep).unwrap();
        assert_eq!(json["metric"], "predictive");
        assert_eq!(json["n_runs"], 3);
        assert!((json["mean"].as_f64().unwrap() - 0.2).abs() < 1e-12);
        assert!(json["std"].as_f64().unwrap() > 0.0);
    }
}
