//! Exact t-SNE over flattened windows, for visual comparison of real and
//! synthetic distributions.
//!
//! Gaussian input affinities with a per-point bandwidth found by binary
//! search to hit the target perplexity entropy, symmetrized and
//! normalized; Student-t output affinities; KL minimized by gradient
//! descent with momentum and early exaggeration. Everything runs in f64
//! and is deterministic given the seed.

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::rng::{self, stream_rng};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations that run with exaggerated affinities and the lower
    /// momentum before switching.
    pub switch_iter: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Per-set cap; each set subsamples to `min(cap, N)` points.
    pub max_points_per_set: usize,
    /// Entropy tolerance and step cap for the bandwidth search.
    pub entropy_tol: f64,
    pub max_bisections: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 40.0,
            iters: 1000,
            seed: 0,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            switch_iter: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            max_points_per_set: 1000,
            entropy_tol: 1e-4,
            max_bisections: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLabel {
    Real,
    Synthetic,
}

impl PointLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointLabel::Real => "real",
            PointLabel::Synthetic => "synthetic",
        }
    }
}

/// Two-dimensional embedding with per-point provenance labels and the
/// final KL divergence (plus its full per-iteration trace).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<PointLabel>,
    pub kl: f64,
    pub kl_trace: Vec<f64>,
}

fn flatten_set(set: &SequenceBatch) -> Vec<Vec<f64>> {
    (0..set.batch)
        .map(|i| set.window(i).iter().map(|&v| v as f64).collect())
        .collect()
}

fn subsample(points: Vec<Vec<f64>>, cap: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<f64>> {
    if points.len() <= cap {
        return points;
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.shuffle(rng);
    idx.truncate(cap);
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i].clone()).collect()
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            let mut s = 0.0;
            for (a, b) in points[i].iter().zip(points[j].iter()) {
                let diff = a - b;
                s += diff * diff;
            }
            *slot = s;
        }
    });
    d
}

/// Conditional affinities for one point at bandwidth `beta = 1/(2σ²)` and
/// the Shannon entropy (nats) of that distribution.
fn row_affinities(dist_row: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let n = dist_row.len();
    let mut min_d = f64::INFINITY;
    for j in 0..n {
        if j != i {
            min_d = min_d.min(dist_row[j]);
        }
    }
    let mut sum = 0.0;
    for j in 0..n {
        if j == i {
            out[j] = 0.0;
            continue;
        }
        // Shift by the row minimum for overflow safety; cancels in the ratio.
        let e = (-beta * (dist_row[j] - min_d)).exp();
        out[j] = e;
        sum += e;
    }
    let mut entropy = 0.0;
    for j in 0..n {
        if j == i {
            continue;
        }
        out[j] /= sum;
        if out[j] > 0.0 {
            entropy -= out[j] * out[j].ln();
        }
    }
    entropy
}

/// Binary search for each point's bandwidth so the conditional entropy
/// matches `ln(perplexity)` within tolerance. Returns the row-normalized
/// conditional affinity matrix and the worst entropy gap observed.
pub fn conditional_affinities(
    dist: &[f64],
    n: usize,
    cfg: &TsneConfig,
) -> (Vec<f64>, f64) {
    let target = cfg.perplexity.ln();
    let mut p = vec![0.0; n * n];
    let gaps: Vec<f64> = p
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| {
            let drow = &dist[i * n..(i + 1) * n];
            let mut beta = 1.0;
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut entropy = row_affinities(drow, i, beta, row);
            let mut steps = 0;
            while (entropy - target).abs() > cfg.entropy_tol && steps < cfg.max_bisections {
                if entropy > target {
                    // Too flat: tighten the kernel.
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
                entropy = row_affinities(drow, i, beta, row);
                steps += 1;
            }
            (entropy - target).abs()
        })
        .collect();
    let worst = gaps.into_iter().fold(0.0f64, f64::max);
    (p, worst)
}

fn symmetrize(p_cond: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (p_cond[i * n + j] + p_cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

fn kl_divergence(p: &[f64], q_num: &[f64], z: f64, n: usize) -> f64 {
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p[i * n + j];
            if pij > 0.0 {
                let qij = (q_num[i * n + j] / z).max(1e-300);
                kl += pij * (pij / qij).ln();
            }
        }
    }
    kl
}

/// Embed flattened real and synthetic windows together. Each set is capped
/// at `max_points_per_set` (seeded subsample); real points come first.
pub fn tsne_embed(
    real: &SequenceBatch,
    synth: &SequenceBatch,
    cfg: &TsneConfig,
) -> Result<Embedding2D> {
    if real.seq_len != synth.seq_len || real.features != synth.features {
        return Err(Error::Data(format!(
            "tsne: real [{}x{}] vs synthetic [{}x{}] window shapes differ",
            real.seq_len, real.features, synth.seq_len, synth.features
        )));
    }
    let mut rng = stream_rng(cfg.seed, rng::stream::TSNE);
    let real_pts = subsample(flatten_set(real), cfg.max_points_per_set, &mut rng);
    let synth_pts = subsample(flatten_set(synth), cfg.max_points_per_set, &mut rng);
    let n_real = real_pts.len();
    let mut points = real_pts;
    points.extend(synth_pts);
    let n = points.len();
    if n < 4 {
        return Err(Error::Data(format!("tsne: only {n} points")));
    }
    if cfg.perplexity >= n as f64 {
        return Err(Error::Config(format!(
            "tsne: perplexity {} must be below the point count {n}",
            cfg.perplexity
        )));
    }
    if cfg.perplexity <= 1.0 {
        return Err(Error::Config(format!(
            "tsne: perplexity must exceed 1, got {}",
            cfg.perplexity
        )));
    }

    let dist = squared_distances(&points);
    let (p_cond, _worst_gap) = conditional_affinities(&dist, n, cfg);
    let p = symmetrize(&p_cond, n);

    // Small Gaussian init.
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            [a * 1e-4, b * 1e-4]
        })
        .collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(cfg.iters);
    let mut q_num = vec![0.0; n * n];

    for iter in 0..cfg.iters {
        // Student-t numerators and their total.
        let row_sums: Vec<f64> = q_num
            .par_chunks_mut(n)
            .enumerate()
            .map(|(i, row)| {
                let mut s = 0.0;
                for (j, slot) in row.iter_mut().enumerate() {
                    if i == j {
                        *slot = 0.0;
                        continue;
                    }
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    *slot = 1.0 / (1.0 + dx * dx + dy * dy);
                    s += *slot;
                }
                s
            })
            .collect();
        let z: f64 = row_sums.iter().sum();

        let exaggeration = if iter < cfg.switch_iter {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < cfg.switch_iter {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };

        // dC/dy_i = 4 Σ_j (p_ij − q_ij) q_num_ij (y_i − y_j)
        let grads: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0f64; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let qn = q_num[i * n + j];
                    let qij = qn / z;
                    let coeff = 4.0 * (exaggeration * p[i * n + j] - qij) * qn;
                    g[0] += coeff * (y[i][0] - y[j][0]);
                    g[1] += coeff * (y[i][1] - y[j][1]);
                }
                g
            })
            .collect();

        for i in 0..n {
            for d in 0..2 {
                velocity[i][d] = momentum * velocity[i][d] - cfg.learning_rate * grads[i][d];
                y[i][d] += velocity[i][d];
            }
        }
        // Re-center to remove drift.
        let mut mean = [0.0f64; 2];
        for pt in &y {
            mean[0] += pt[0];
            mean[1] += pt[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        for pt in &mut y {
            pt[0] -= mean[0];
            pt[1] -= mean[1];
        }

        // KL against the true (unexaggerated) affinities.
        kl_trace.push(kl_divergence(&p, &q_num, z, n));
    }

    let labels: Vec<PointLabel> = (0..n)
        .map(|i| {
            if i < n_real {
                PointLabel::Real
            } else {
                PointLabel::Synthetic
            }
        })
        .collect();
    Ok(Embedding2D {
        points: y,
        labels,
        kl: kl_trace.last().copied().unwrap_or(f64::NAN),
        kl_trace,
    })
}

/// Write the embedding as CSV (`x,y,label`) and, when a path is given, a
/// PNG scatter with real points in red and synthetic points in blue.
pub fn export_plot(
    embedding: &Embedding2D,
    csv_path: &Path,
    png_path: Option<&Path>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?,
    );
    writeln!(out, "x,y,label").map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    for (pt, label) in embedding.points.iter().zip(&embedding.labels) {
        writeln!(out, "{},{},{}", pt[0], pt[1], label.as_str())
            .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    }
    out.flush().map_err(|e| Error::io(csv_path.display().to_string(), e))?;

    if let Some(png) = png_path {
        let size = 800u32;
        let margin = 40.0f64;
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for pt in &embedding.points {
            min_x = min_x.min(pt[0]);
            max_x = max_x.max(pt[0]);
            min_y = min_y.min(pt[1]);
            max_y = max_y.max(pt[1]);
        }
        let span_x = (max_x - min_x).max(1e-12);
        let span_y = (max_y - min_y).max(1e-12);
        let scale = (size as f64 - 2.0 * margin) / span_x.max(span_y);
        let mut img = image::RgbImage::from_pixel(size, size, image::Rgb([255, 255, 255]));
        for (pt, label) in embedding.points.iter().zip(&embedding.labels) {
            let px = margin + (pt[0] - min_x) * scale;
            let py = margin + (pt[1] - min_y) * scale;
            let color = match label {
                PointLabel::Real => image::Rgb([204, 36, 29]),
                PointLabel::Synthetic => image::Rgb([38, 87, 204]),
            };
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let x = (px as i64 + dx).clamp(0, size as i64 - 1) as u32;
                    let yy = (py as i64 + dy).clamp(0, size as i64 - 1) as u32;
                    img.put_pixel(x, yy, color);
                }
            }
        }
        img.save(png).map_err(|e| Error::Data(format!("png save failed: {e}")))?;
    }
    Ok(())
}
