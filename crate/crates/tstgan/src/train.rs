//! The three-stage optimisation schedule, ablation-aware wiring, metrics
//! logging and checkpoint persistence.
//!
//! Stage 1 trains the embedder–predictor on the supervised loss, stage 2
//! pre-trains the generator on its auxiliary objective (masked modelling,
//! or the teacher-forced replacement in the autoregressive ablation), and
//! the joint stage alternates four sub-steps per iteration: discriminator,
//! generator GAN (+ moment loss), generator auxiliary, embedder–predictor.
//!
//! The predictor gradient gate is the optimizer assignment itself: the
//! predictor has its own optimizer, stepped only on the supervised
//! sub-step (or together with the generator when the embedder is ablated),
//! so gradients may flow through it while its parameters stay frozen.

use crate::data::{SequenceBatch, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{AblationMode, ModelConfig, TstGan};
use crate::model::{loss_gan_d, loss_gan_g, loss_moment, loss_supervised};
use crate::nn::Adam;
use crate::rng::{self, stream_rng, RngState};
use crate::tensor::{Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Every architectural and training hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub ablation: AblationMode,
    pub p_mask: f64,
    pub batch_size: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub joint_steps: usize,
    pub lr_stage12: f64,
    pub lr_joint: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Moment-loss weight; enters only the generator's GAN sub-step.
    pub lambda_ml: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn with_features(features: usize) -> Self {
        TrainConfig {
            model: ModelConfig::with_features(features),
            ablation: AblationMode::Full,
            p_mask: 0.3,
            batch_size: 128,
            stage1_steps: 5_000,
            stage2_steps: 5_000,
            joint_steps: 40_000,
            lr_stage12: 0.001,
            lr_joint: 0.00002,
            beta1: 0.5,
            beta2: 0.999,
            lambda_ml: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.p_mask > 0.0 && self.p_mask < 1.0) {
            return Err(Error::Config(format!(
                "p_mask must lie in (0, 1), got {}",
                self.p_mask
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("stage1_steps", self.stage1_steps),
            ("stage2_steps", self.stage2_steps),
            ("joint_steps", self.joint_steps),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.lr_stage12 <= 0.0 || self.lr_joint <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.lambda_ml < 0.0 {
            return Err(Error::Config(format!(
                "lambda_ml must be nonnegative, got {}",
                self.lambda_ml
            )));
        }
        Ok(())
    }
}

/// One metrics record per step, JSON-lines. Keys are sorted, so files are
/// byte-reproducible.
pub struct MetricsLog {
    out: Box<dyn Write + Send>,
}

impl MetricsLog {
    pub fn to_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(MetricsLog {
            out: Box::new(std::io::BufWriter::new(f)),
        })
    }

    pub fn sink() -> Self {
        MetricsLog {
            out: Box::new(std::io::sink()),
        }
    }

    fn record(&mut self, stage: &str, step: usize, losses: &[(&str, f32)]) -> Result<()> {
        let mut map = serde_json::Map::new();
        map.insert("stage".into(), stage.into());
        map.insert("step".into(), serde_json::json!(step));
        for (k, v) in losses {
            map.insert((*k).into(), serde_json::json!(v));
        }
        let sorted: std::collections::BTreeMap<_, _> = map.into_iter().collect();
        writeln!(self.out, "{}", serde_json::to_string(&sorted).unwrap())
            .map_err(|e| Error::io("metrics log", e))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io("metrics log", e))
    }
}

/// Losses produced by one joint step; absent sub-steps are `None`.
#[derive(Debug, Clone, Copy, Default)]
pub struct JointLosses {
    pub d: f32,
    pub g: f32,
    pub ml: Option<f32>,
    pub aux: Option<f32>,
    pub s: Option<f32>,
}

pub struct Trainer {
    pub model: TstGan<f32>,
    pub cfg: TrainConfig,
    opt_embedder: Adam<f32>,
    opt_predictor: Adam<f32>,
    opt_generator: Adam<f32>,
    opt_discriminator: Adam<f32>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = stream_rng(cfg.seed, rng::stream::INIT);
        let model = TstGan::new(&mut init_rng, cfg.model.clone(), cfg.ablation)?;
        let rng = stream_rng(cfg.seed, rng::stream::TRAIN);
        let (b1, b2, lr) = (cfg.beta1, cfg.beta2, cfg.lr_stage12);
        Ok(Trainer {
            opt_embedder: Adam::new(model.embedder_params(), lr, b1, b2),
            opt_predictor: Adam::new(model.predictor_params(), lr, b1, b2),
            opt_generator: Adam::new(model.generator_params(), lr, b1, b2),
            opt_discriminator: Adam::new(model.discriminator_params(), lr, b1, b2),
            model,
            cfg,
            rng,
        })
    }

    /// Rebuild optimizers with a new learning rate and fresh moments; used
    /// at the joint-stage boundary where the learning rate drops.
    fn reset_optimizers(&mut self, lr: f64) {
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        self.opt_embedder = Adam::new(self.model.embedder_params(), lr, b1, b2);
        self.opt_predictor = Adam::new(self.model.predictor_params(), lr, b1, b2);
        self.opt_generator = Adam::new(self.model.generator_params(), lr, b1, b2);
        self.opt_discriminator = Adam::new(self.model.discriminator_params(), lr, b1, b2);
    }

    fn zero_all_grads(&self) {
        self.opt_embedder.zero_grads();
        self.opt_predictor.zero_grads();
        self.opt_generator.zero_grads();
        self.opt_discriminator.zero_grads();
    }

    pub fn rng_state(&self) -> RngState {
        rng::capture(self.cfg.seed, rng::stream::TRAIN, &self.rng)
    }

    fn sample_real(&mut self, data: &WindowedDataset) -> SequenceBatch {
        data.sample_batch(&data.train_idx, self.cfg.batch_size, &mut self.rng)
    }

    fn sample_noise(&mut self, batch: usize) -> Tensor<f32> {
        let m = self.cfg.model.clone();
        let n = batch * m.seq_len * m.noise_dim;
        let data: Vec<f32> = (0..n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut self.rng);
                v as f32
            })
            .collect();
        Tensor::new(&[batch, m.seq_len, m.noise_dim], data)
    }

    /// Bernoulli(p_mask) per position, redrawn per sequence until at least
    /// one position is masked.
    fn sample_mask(&mut self, batch: usize) -> Vec<bool> {
        let t = self.cfg.model.seq_len;
        let p = self.cfg.p_mask;
        let mut mask = vec![false; batch * t];
        for s in 0..batch {
            loop {
                let row = &mut mask[s * t..(s + 1) * t];
                let mut any = false;
                for v in row.iter_mut() {
                    *v = self.rng.gen_bool(p);
                    any |= *v;
                }
                if any {
                    break;
                }
            }
        }
        mask
    }

    fn guard(&self, stage: &str, step: usize, name: &str, v: f32) -> Result<f32> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!(
                "{stage} step {step}: loss {name} is not finite ({v})"
            )))
        }
    }

    /// One supervised step on the embedder–predictor.
    pub fn stage1_step(&mut self, data: &WindowedDataset, step: usize) -> Result<f32> {
        let batch = self.sample_real(data).to_tensor();
        self.zero_all_grads();
        let tape = Tape::new();
        let (_, x_hat) = self.model.embed_and_predict(&tape, &batch)?;
        let loss = loss_supervised(&tape, &batch, &x_hat);
        tape.backward(&loss);
        self.opt_embedder.step();
        self.opt_predictor.step();
        self.guard("stage1", step, "loss_s", loss.item())
    }

    /// One auxiliary-objective step on the generator (masked modelling, or
    /// the teacher-forced objective in the autoregressive ablation).
    pub fn stage2_step(&mut self, data: &WindowedDataset, step: usize) -> Result<f32> {
        let batch = self.sample_real(data);
        self.zero_all_grads();
        let tape = Tape::new();
        let loss = if self.cfg.ablation.has_masked_modelling() {
            let mask = self.sample_mask(batch.batch);
            let (_, loss) = self.model.masked_modelling(&tape, &batch.to_tensor(), &mask)?;
            loss
        } else {
            self.model.auto_loss(&tape, &batch.to_tensor())?
        };
        tape.backward(&loss);
        self.opt_generator.step();
        self.guard("stage2", step, "loss_aux", loss.item())
    }

    /// Discriminator sub-step: real batch vs. detached fakes.
    pub fn joint_substep_d(&mut self, data: &WindowedDataset, step: usize) -> Result<f32> {
        let real = self.sample_real(data).to_tensor();
        let z = self.sample_noise(self.cfg.batch_size);
        // Detach: generation runs on a non-recording tape.
        let fake = self.model.generate(&Tape::inference(), &z)?;
        self.zero_all_grads();
        let tape = Tape::new();
        let sr = self.model.discriminate(&tape, &real)?;
        let sf = self.model.discriminate(&tape, &fake)?;
        let loss = loss_gan_d(&tape, &sr, &sf);
        tape.backward(&loss);
        self.opt_discriminator.step();
        self.guard("joint", step, "loss_d", loss.item())
    }

    /// Generator GAN sub-step, plus the moment loss when active. The
    /// predictor is gated: gradients flow through it, but its optimizer is
    /// stepped only when the embedder is ablated.
    pub fn joint_substep_g(&mut self, data: &WindowedDataset, step: usize) -> Result<(f32, Option<f32>)> {
        let use_ml = self.cfg.ablation.has_moment_loss() && self.cfg.lambda_ml > 0.0;
        let real = if use_ml {
            Some(self.sample_real(data).to_tensor())
        } else {
            None
        };
        let z = self.sample_noise(self.cfg.batch_size);
        self.zero_all_grads();
        let tape = Tape::new();
        let fake = self.model.generate(&tape, &z)?;
        let sf = self.model.discriminate(&tape, &fake)?;
        let gan = loss_gan_g(&tape, &sf);
        let (loss, ml_value) = match &real {
            Some(r) => {
                let ml = loss_moment(&tape, r, &fake);
                let weighted = tape.mul_scalar(&ml, self.cfg.lambda_ml as f32);
                (tape.add(&gan, &weighted), Some(ml.item()))
            }
            None => (gan.clone(), None),
        };
        tape.backward(&loss);
        self.opt_generator.step();
        if self.cfg.ablation.predictor_updates_with_generator() {
            self.opt_predictor.step();
        }
        let g = self.guard("joint", step, "loss_g", gan.item())?;
        if let Some(ml) = ml_value {
            self.guard("joint", step, "loss_ml", ml)?;
        }
        Ok((g, ml_value))
    }

    /// Generator auxiliary sub-step (masked modelling or teacher-forced),
    /// alternating 1:1 with the GAN sub-step.
    pub fn joint_substep_aux(&mut self, data: &WindowedDataset, step: usize) -> Result<Option<f32>> {
        if !self.cfg.ablation.has_aux_head() {
            return Ok(None);
        }
        let loss = self.stage2_like_step(data)?;
        self.guard("joint", step, "loss_aux", loss)?;
        Ok(Some(loss))
    }

    fn stage2_like_step(&mut self, data: &WindowedDataset) -> Result<f32> {
        let batch = self.sample_real(data);
        self.zero_all_grads();
        let tape = Tape::new();
        let loss = if self.cfg.ablation.has_masked_modelling() {
            let mask = self.sample_mask(batch.batch);
            let (_, loss) = self.model.masked_modelling(&tape, &batch.to_tensor(), &mask)?;
            loss
        } else {
            self.model.auto_loss(&tape, &batch.to_tensor())?
        };
        tape.backward(&loss);
        self.opt_generator.step();
        Ok(loss.item())
    }

    /// Supervised sub-step; the only place the shared predictor updates.
    pub fn joint_substep_sup(&mut self, data: &WindowedDataset, step: usize) -> Result<Option<f32>> {
        if !self.cfg.ablation.has_embedder() {
            return Ok(None);
        }
        let batch = self.sample_real(data).to_tensor();
        self.zero_all_grads();
        let tape = Tape::new();
        let (_, x_hat) = self.model.embed_and_predict(&tape, &batch)?;
        let loss = loss_supervised(&tape, &batch, &x_hat);
        tape.backward(&loss);
        self.opt_embedder.step();
        self.opt_predictor.step();
        Ok(Some(self.guard("joint", step, "loss_s", loss.item())?))
    }

    pub fn joint_step(&mut self, data: &WindowedDataset, step: usize) -> Result<JointLosses> {
        let d = self.joint_substep_d(data, step)?;
        let (g, ml) = self.joint_substep_g(data, step)?;
        let aux = self.joint_substep_aux(data, step)?;
        let s = self.joint_substep_sup(data, step)?;
        Ok(JointLosses { d, g, ml, aux, s })
    }

    /// Run the full schedule, logging every step.
    pub fn train(&mut self, data: &WindowedDataset, log: &mut MetricsLog) -> Result<()> {
        if data.features != self.cfg.model.features || data.seq_len != self.cfg.model.seq_len {
            return Err(Error::Config(format!(
                "dataset is [{} x {} x {}], config expects [_, {}, {}]",
                data.n, data.seq_len, data.features, self.cfg.model.seq_len, self.cfg.model.features
            )));
        }
        if self.cfg.ablation.has_embedder() {
            for step in 1..=self.cfg.stage1_steps {
                let l = self.stage1_step(data, step)?;
                log.record("stage1", step, &[("loss_s", l)])?;
            }
        }
        if self.cfg.ablation.has_aux_head() {
            for step in 1..=self.cfg.stage2_steps {
                let l = self.stage2_step(data, step)?;
                log.record("stage2", step, &[("loss_aux", l)])?;
            }
        }
        self.reset_optimizers(self.cfg.lr_joint);
        for step in 1..=self.cfg.joint_steps {
            let l = self.joint_step(data, step)?;
            let mut fields: Vec<(&str, f32)> = vec![("loss_d", l.d), ("loss_g", l.g)];
            if let Some(v) = l.ml {
                fields.push(("loss_ml", v));
            }
            if let Some(v) = l.aux {
                fields.push(("loss_aux", v));
            }
            if let Some(v) = l.s {
                fields.push(("loss_s", v));
            }
            log.record("joint", step, &fields)?;
        }
        log.flush()
    }

    /// Synthetic windows from the trained generator, seeded independently
    /// of the training stream.
    pub fn synthesize(model: &TstGan<f32>, n: usize, seed: u64) -> Result<SequenceBatch> {
        let m = &model.config;
        let mut rng = stream_rng(seed, rng::stream::SYNTH);
        let mut out = Vec::with_capacity(n * m.seq_len * m.features);
        // Generate in chunks to bound peak memory.
        let chunk = 256usize;
        let mut produced = 0;
        while produced < n {
            let b = chunk.min(n - produced);
            let zn = b * m.seq_len * m.noise_dim;
            let z: Vec<f32> = (0..zn)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v as f32
                })
                .collect();
            let zt = Tensor::new(&[b, m.seq_len, m.noise_dim], z);
            let batch = model.generate(&Tape::inference(), &zt)?;
            out.extend_from_slice(&batch.data());
            produced += b;
        }
        Ok(SequenceBatch::new(out, n, m.seq_len, m.features))
    }
}

// ── Checkpoint format ────────────────────────────────────────────────
//
// magic "TSTG" | u32 version (LE) | u64 manifest length (LE) |
// UTF-8 JSON manifest | contiguous little-endian f32 payloads.
// Manifest offsets are byte offsets into the payload region.

const MAGIC: &[u8; 4] = b"TSTG";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestTensor {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: TrainConfig,
    rng_state: RngState,
    tensors: Vec<ManifestTensor>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &TstGan<f32>,
    cfg: &TrainConfig,
    rng_state: &RngState,
) -> Result<()> {
    let named = model.named_params();
    let mut tensors = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, p) in &named {
        tensors.push(ManifestTensor {
            name: name.clone(),
            shape: p.shape(),
            offset,
        });
        offset += (p.numel() * 4) as u64;
    }
    let manifest = Manifest {
        config: cfg.clone(),
        rng_state: rng_state.clone(),
        tensors,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::CheckpointMalformed(format!("manifest serialization: {e}")))?;

    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let io_err = |e| Error::io(path.display().to_string(), e);
    out.write_all(MAGIC).map_err(io_err)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    out.write_all(&(manifest_bytes.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    out.write_all(&manifest_bytes).map_err(io_err)?;
    for (_, p) in &named {
        for v in p.data().iter() {
            out.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

pub struct LoadedCheckpoint {
    pub model: TstGan<f32>,
    pub config: TrainConfig,
    pub rng_state: RngState,
}

impl std::fmt::Debug for LoadedCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadedCheckpoint")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 4 {
        return Err(Error::CheckpointTruncated("shorter than the magic".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::CheckpointBadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::CheckpointTruncated("header incomplete".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::CheckpointBadVersion(version));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + manifest_len {
        return Err(Error::CheckpointTruncated(format!(
            "manifest needs {} bytes, file has {}",
            manifest_len,
            bytes.len() - 16
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + manifest_len])
        .map_err(|e| Error::CheckpointMalformed(format!("manifest parse: {e}")))?;
    manifest.config.validate()?;

    let payload = &bytes[16 + manifest_len..];
    // Rebuild the model skeleton; every parameter is overwritten below.
    let mut dummy_rng = stream_rng(0, 0);
    let model = TstGan::new(
        &mut dummy_rng,
        manifest.config.model.clone(),
        manifest.config.ablation,
    )?;
    let named = model.named_params();
    if named.len() != manifest.tensors.len() {
        return Err(Error::CheckpointMalformed(format!(
            "checkpoint has {} tensors, wiring for '{}' expects {}",
            manifest.tensors.len(),
            manifest.config.ablation.flag(),
            named.len()
        )));
    }
    for ((name, param), entry) in named.iter().zip(&manifest.tensors) {
        if name != &entry.name {
            return Err(Error::CheckpointMalformed(format!(
                "tensor name mismatch: expected '{name}', found '{}'",
                entry.name
            )));
        }
        if param.shape() != entry.shape {
            return Err(Error::CheckpointMalformed(format!(
                "tensor '{name}' has shape {:?}, config implies {:?}",
                entry.shape,
                param.shape()
            )));
        }
        let count = param.numel();
        let start = entry.offset as usize;
        let end = start + count * 4;
        if end > payload.len() {
            return Err(Error::CheckpointTruncated(format!(
                "tensor '{name}' needs payload bytes {start}..{end}, payload has {}",
                payload.len()
            )));
        }
        let values: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        param.copy_from(&values);
    }
    Ok(LoadedCheckpoint {
        model,
        config: manifest.config,
        rng_state: manifest.rng_state,
    })
}

#[cfg(test)]
mod tests;
