//! Data pipeline: sine-wave dataset generation, CSV ingestion, sliding
//! windows, min-max scaling and train/test splits.
//!
//! Scaling is fit on training rows only, so test windows may fall slightly
//! outside [0, 1]; values are never clipped.

use crate::error::{Error, Result};
use crate::rng::{self, stream_rng};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

/// A `[batch, time, feature]` block of scaled values: the unit every model
/// component consumes and produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub data: Vec<f32>,
    pub batch: usize,
    pub seq_len: usize,
    pub features: usize,
}

impl SequenceBatch {
    pub fn new(data: Vec<f32>, batch: usize, seq_len: usize, features: usize) -> Self {
        assert_eq!(data.len(), batch * seq_len * features);
        SequenceBatch {
            data,
            batch,
            seq_len,
            features,
        }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[self.batch, self.seq_len, self.features], self.data.clone())
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let len = self.seq_len * self.features;
        &self.data[i * len..(i + 1) * len]
    }
}

/// A rectangular numeric table in temporal order.
#[derive(Debug, Clone)]
pub struct RawSeries {
    pub feature_names: Vec<String>,
    /// Row-major values, `rows × features`.
    pub values: Vec<f32>,
    pub rows: usize,
    pub source_id: String,
    pub content_hash: String,
}

impl RawSeries {
    pub fn features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let m = self.features();
        &self.values[r * m..(r + 1) * m]
    }
}

/// Per-feature min-max scaler. Constant features map to 0.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl Scaler {
    pub fn identity(features: usize) -> Self {
        Scaler {
            min: vec![0.0; features],
            max: vec![1.0; features],
        }
    }

    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f32]>, features: usize) -> Self {
        let mut min = vec![f32::INFINITY; features];
        let mut max = vec![f32::NEG_INFINITY; features];
        for row in rows {
            for f in 0..features {
                min[f] = min[f].min(row[f]);
                max[f] = max[f].max(row[f]);
            }
        }
        Scaler { min, max }
    }

    pub fn scale_value(&self, feature: usize, v: f32) -> f32 {
        let range = self.max[feature] - self.min[feature];
        if range == 0.0 {
            0.0
        } else {
            (v - self.min[feature]) / range
        }
    }

    pub fn invert_value(&self, feature: usize, v: f32) -> f32 {
        let range = self.max[feature] - self.min[feature];
        v * range + self.min[feature]
    }
}

/// Windowed, scaled dataset with a train/test split by window index.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    /// `[N, T, m]` scaled values.
    pub windows: Vec<f32>,
    pub n: usize,
    pub seq_len: usize,
    pub features: usize,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub scaler: Scaler,
    pub source_id: String,
    pub source_hash: String,
}

impl WindowedDataset {
    pub fn window(&self, i: usize) -> &[f32] {
        let len = self.seq_len * self.features;
        &self.windows[i * len..(i + 1) * len]
    }

    pub fn batch_from_indices(&self, idx: &[usize]) -> SequenceBatch {
        let len = self.seq_len * self.features;
        let mut data = Vec::with_capacity(idx.len() * len);
        for &i in idx {
            data.extend_from_slice(self.window(i));
        }
        SequenceBatch::new(data, idx.len(), self.seq_len, self.features)
    }

    /// Uniform sample with replacement from `pool`.
    pub fn sample_batch(&self, pool: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> SequenceBatch {
        let idx: Vec<usize> = (0..batch).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
        self.batch_from_indices(&idx)
    }

    pub fn train_batchset(&self) -> SequenceBatch {
        self.batch_from_indices(&self.train_idx)
    }

    pub fn test_batchset(&self) -> SequenceBatch {
        self.batch_from_indices(&self.test_idx)
    }
}

pub(crate) fn sine_values(lambda: f32, phi: f32, seq_len: usize) -> Vec<f32> {
    (0..seq_len)
        .map(|t| ((lambda * t as f32 + phi).sin() + 1.0) / 2.0)
        .collect()
}

/// Multivariate sine dataset: per sample and feature, frequency
/// `λ ~ U[0, 1]` and phase `φ ~ U[−π, π]`, value `sin(λt + φ)` rescaled to
/// [0, 1]. Samples are independent windows; no sliding. The first
/// `train_frac` of samples form the training split (they are i.i.d., so no
/// shuffle is needed).
pub fn generate_sines(
    n_samples: usize,
    seq_len: usize,
    n_features: usize,
    train_frac: f64,
    seed: u64,
) -> Result<WindowedDataset> {
    if n_samples == 0 || seq_len == 0 || n_features == 0 {
        return Err(Error::Config(
            "sines: samples, seq-len and features must be positive".into(),
        ));
    }
    let mut rng = stream_rng(seed, rng::stream::DATA);
    let mut windows = Vec::with_capacity(n_samples * seq_len * n_features);
    for _ in 0..n_samples {
        let params: Vec<(f32, f32)> = (0..n_features)
            .map(|_| {
                let lambda = rng.gen_range(0.0..1.0f64) as f32;
                let phi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI) as f32;
                (lambda, phi)
            })
            .collect();
        let per_feature: Vec<Vec<f32>> = params
            .iter()
            .map(|&(l, p)| sine_values(l, p, seq_len))
            .collect();
        for t in 0..seq_len {
            for feat in per_feature.iter() {
                windows.push(feat[t]);
            }
        }
    }
    let train_count = split_count(n_samples, train_frac)?;
    let source_id = format!("sines(n={n_samples},t={seq_len},m={n_features},seed={seed})");
    let source_hash = hex_digest(source_id.as_bytes());
    Ok(WindowedDataset {
        windows,
        n: n_samples,
        seq_len,
        features: n_features,
        train_idx: (0..train_count).collect(),
        test_idx: (train_count..n_samples).collect(),
        scaler: Scaler::identity(n_features),
        source_id,
        source_hash,
    })
}

fn split_count(n: usize, train_frac: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::Config(format!(
            "train_frac must be in [0, 1], got {train_frac}"
        )));
    }
    let raw = (n as f64 * train_frac).round() as usize;
    Ok(raw.clamp(1, n.saturating_sub(1).max(1)))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex_digest(&bytes))
}

/// Parse a CSV with a header row into a rectangular numeric series,
/// dropping the named columns. Non-numeric cells in kept columns are
/// reported with their row number.
pub fn load_csv(path: &Path, drop_columns: &[String]) -> Result<RawSeries> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let content_hash = hex_digest(&bytes);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    let keep: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, name)| !drop_columns.iter().any(|d| d == name))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::Data(format!(
            "{}: no feature columns remain after dropping {:?}",
            path.display(),
            drop_columns
        )));
    }
    let feature_names: Vec<String> = keep.iter().map(|&i| headers[i].to_string()).collect();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (ri, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), ri + 1)))?;
        for &ci in &keep {
            let cell = record.get(ci).ok_or_else(|| {
                Error::Data(format!(
                    "{}: row {}: missing column '{}'",
                    path.display(),
                    ri + 1,
                    &headers[ci]
                ))
            })?;
            let v: f32 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {}: column '{}' value '{}' is not numeric",
                    path.display(),
                    ri + 1,
                    &headers[ci],
                    cell
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!(
            "{}: no data rows after the header",
            path.display()
        )));
    }
    Ok(RawSeries {
        feature_names,
        values,
        rows,
        source_id: path.display().to_string(),
        content_hash,
    })
}

/// Stride-1 sliding windows of length `seq_len`, scaled by a min-max
/// scaler fit on the rows covered by training windows only. The window
/// order is shuffled with the seed and split by window.
pub fn window_and_scale(
    raw: &RawSeries,
    seq_len: usize,
    train_frac: f64,
    seed: u64,
) -> Result<WindowedDataset> {
    let m = raw.features();
    if raw.rows < seq_len {
        return Err(Error::Data(format!(
            "{}: {} rows is fewer than the window length {}",
            raw.source_id, raw.rows, seq_len
        )));
    }
    if seq_len < 2 {
        return Err(Error::Config(format!(
            "window length must be at least 2, got {seq_len}"
        )));
    }
    let n = raw.rows - seq_len + 1;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, rng::stream::DATA);
    order.shuffle(&mut rng);
    let train_count = split_count(n, train_frac)?;
    let mut train_idx: Vec<usize> = order[..train_count].to_vec();
    let mut test_idx: Vec<usize> = order[train_count..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    // Scaler fit on the union of rows covered by any training window.
    let mut covered = vec![false; raw.rows];
    for &w in &train_idx {
        for r in w..w + seq_len {
            covered[r] = true;
        }
    }
    let scaler = Scaler::fit(
        (0..raw.rows).filter(|&r| covered[r]).map(|r| raw.row(r)),
        m,
    );

    let mut windows = Vec::with_capacity(n * seq_len * m);
    for w in 0..n {
        for r in w..w + seq_len {
            let row = raw.row(r);
            for f in 0..m {
                windows.push(scaler.scale_value(f, row[f]));
            }
        }
    }
    Ok(WindowedDataset {
        windows,
        n,
        seq_len,
        features: m,
        train_idx,
        test_idx,
        scaler,
        source_id: raw.source_id.clone(),
        source_hash: raw.content_hash.clone(),
    })
}

/// Write windows in the synthetic CSV interchange format:
/// `sample_id,t,f0..f{m-1}`, values in scaled space with full round-trip
/// decimal formatting.
pub fn export_synthetic(path: &Path, batch: &SequenceBatch) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let header: Vec<String> = ["sample_id".to_string(), "t".to_string()]
        .into_iter()
        .chain((0..batch.features).map(|f| format!("f{f}")))
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(|e| Error::io(path.display().to_string(), e))?;
    for s in 0..batch.batch {
        for t in 0..batch.seq_len {
            let mut fields = vec![s.to_string(), t.to_string()];
            for f in 0..batch.features {
                fields.push(batch.data[(s * batch.seq_len + t) * batch.features + f].to_string());
            }
            writeln!(out, "{}", fields.join(","))
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read the synthetic CSV format back. Sample ids must be contiguous from
/// zero, every sample must have the same length, and rows must be
/// rectangular.
pub fn import_synthetic(path: &Path) -> Result<SequenceBatch> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    if headers.len() < 3 || &headers[0] != "sample_id" || &headers[1] != "t" {
        return Err(Error::Data(format!(
            "{}: expected header sample_id,t,f0.., got {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let m = headers.len() - 2;
    let mut per_sample: Vec<Vec<f32>> = Vec::new();
    for (ri, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), ri + 1)))?;
        if record.len() != m + 2 {
            return Err(Error::Data(format!(
                "{}: row {}: expected {} fields, got {}",
                path.display(),
                ri + 1,
                m + 2,
                record.len()
            )));
        }
        let parse = |i: usize| -> Result<f32> {
            record[i].trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {}: '{}' is not numeric",
                    path.display(),
                    ri + 1,
                    &record[i]
                ))
            })
        };
        let sid = parse(0)? as usize;
        let t = parse(1)? as usize;
        if sid == per_sample.len() {
            per_sample.push(Vec::new());
        } else if sid > per_sample.len() {
            return Err(Error::Data(format!(
                "{}: row {}: sample ids must be contiguous from 0, got {}",
                path.display(),
                ri + 1,
                sid
            )));
        }
        if t != per_sample[sid].len() / m {
            return Err(Error::Data(format!(
                "{}: row {}: time index {} out of order for sample {}",
                path.display(),
                ri + 1,
                t,
                sid
            )));
        }
        for f in 0..m {
            per_sample[sid].push(parse(2 + f)?);
        }
    }
    if per_sample.is_empty() {
        return Err(Error::Data(format!("{}: no samples", path.display())));
    }
    let t_len = per_sample[0].len() / m;
    if t_len == 0 {
        return Err(Error::Data(format!("{}: sample 0 is empty", path.display())));
    }
    for (sid, s) in per_sample.iter().enumerate() {
        if s.len() != t_len * m {
            return Err(Error::Data(format!(
                "{}: sample {} has {} rows, expected {}",
                path.display(),
                sid,
                s.len() / m,
                t_len
            )));
        }
    }
    let n = per_sample.len();
    let data: Vec<f32> = per_sample.into_iter().flatten().collect();
    Ok(SequenceBatch::new(data, n, t_len, m))
}

/// Load either a raw series CSV (auto-windowed with the given length) or a
/// synthetic window CSV, deciding by the header. `drop_columns` applies
/// only to raw series files.
pub fn load_windows_auto(
    path: &Path,
    seq_len: usize,
    train_frac: f64,
    seed: u64,
    drop_columns: &[String],
) -> Result<WindowedDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let first_line = bytes
        .split(|&b| b == b'\n')
        .next()
        .map(|l| String::from_utf8_lossy(l).to_string())
        .unwrap_or_default();
    if first_line.trim_end().starts_with("sample_id,t,") {
        let batch = import_synthetic(path)?;
        if batch.seq_len != seq_len {
            return Err(Error::Data(format!(
                "{}: windows have length {}, expected {}",
                path.display(),
                batch.seq_len,
                seq_len
            )));
        }
        let n = batch.batch;
        let train_count = split_count(n, train_frac)?;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream_rng(seed, rng::stream::DATA);
        order.shuffle(&mut rng);
        let mut train_idx: Vec<usize> = order[..train_count].to_vec();
        let mut test_idx: Vec<usize> = order[train_count..].to_vec();
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        Ok(WindowedDataset {
            windows: batch.data,
            n,
            seq_len: batch.seq_len,
            features: batch.features,
            train_idx,
            test_idx,
            scaler: Scaler::identity(batch.features),
            source_id: path.display().to_string(),
            source_hash: hex_digest(&bytes),
        })
    } else {
        let raw = load_csv(path, drop_columns)?;
        window_and_scale(&raw, seq_len, train_frac, seed)
    }
}
