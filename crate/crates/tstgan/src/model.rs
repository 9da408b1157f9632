//! The four model components — embedder, shared predictor, generator,
//! discriminator — plus the five training losses and the ablation wiring
//! that decides which parts exist.
//!
//! The predictor is a single linear map from latent space back to data
//! space. Exactly one parameter set exists no matter how many paths read
//! it; the training schedule updates it only on the supervised loss (the
//! gradient gate), except in ablations that remove the embedder.

use crate::error::{Error, Result};
use crate::nn::{learnable_vector, sinusoidal_positions, Linear, MaskMode, TransformerLayer};
use crate::tensor::{Scalar, Tape, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Architecture dimensions. Defaults follow the reference setup:
/// model dim 32, 8 heads, feedforward 128, 3 layers, sequences of 24.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Data feature dimension `m`.
    pub features: usize,
    /// Noise feature dimension fed to the generator; defaults to `features`.
    pub noise_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub layers: usize,
    pub seq_len: usize,
}

impl ModelConfig {
    pub fn with_features(features: usize) -> Self {
        ModelConfig {
            features,
            noise_dim: features,
            model_dim: 32,
            heads: 8,
            ff_hidden: 128,
            layers: 3,
            seq_len: 24,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("features", self.features),
            ("noise_dim", self.noise_dim),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("ff_hidden", self.ff_hidden),
            ("layers", self.layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.seq_len < 2 {
            return Err(Error::Config(format!(
                "seq_len must be at least 2, got {}",
                self.seq_len
            )));
        }
        if self.model_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "model_dim must be even for sinusoidal positions, got {}",
                self.model_dim
            )));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Which ablation is active. Names mirror the experiment list: each mode
/// after `Full` removes the moment loss as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Everything: GAN + masked modelling + embedder + moment loss.
    Full,
    /// Drop the moment loss only.
    NoMl,
    /// Causal generator; masked modelling replaced by a teacher-forced
    /// one-step-ahead objective on the generator's own output head.
    NoMmAuto,
    /// No embedder and no supervised loss; the predictor updates jointly
    /// with the generator.
    NoEmbedding,
    /// Drop masked modelling but keep the bidirectional generator and the
    /// embedder.
    NoMm,
    /// Plain transformer GAN: generator + discriminator only.
    Base,
}

impl AblationMode {
    /// CLI flag values: none, ml, mm_auto, embedding, mm, base.
    pub fn from_flag(s: &str) -> Result<Self> {
        Ok(match s {
            "none" | "full" => AblationMode::Full,
            "ml" => AblationMode::NoMl,
            "mm_auto" => AblationMode::NoMmAuto,
            "embedding" => AblationMode::NoEmbedding,
            "mm" => AblationMode::NoMm,
            "base" => AblationMode::Base,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation '{other}' (expected none|ml|mm_auto|embedding|mm|base)"
                )))
            }
        })
    }

    pub fn flag(&self) -> &'static str {
        match self {
            AblationMode::Full => "none",
            AblationMode::NoMl => "ml",
            AblationMode::NoMmAuto => "mm_auto",
            AblationMode::NoEmbedding => "embedding",
            AblationMode::NoMm => "mm",
            AblationMode::Base => "base",
        }
    }

    pub fn has_embedder(&self) -> bool {
        !matches!(self, AblationMode::NoEmbedding | AblationMode::Base)
    }

    /// Moment loss survives only in the full model.
    pub fn has_moment_loss(&self) -> bool {
        matches!(self, AblationMode::Full)
    }

    pub fn has_masked_modelling(&self) -> bool {
        matches!(
            self,
            AblationMode::Full | AblationMode::NoMl | AblationMode::NoEmbedding
        )
    }

    /// Teacher-forced autoregressive replacement objective.
    pub fn has_auto_objective(&self) -> bool {
        matches!(self, AblationMode::NoMmAuto)
    }

    /// The generator needs its auxiliary projections for either masked
    /// modelling or the autoregressive replacement.
    pub fn has_aux_head(&self) -> bool {
        self.has_masked_modelling() || self.has_auto_objective()
    }

    /// A standalone predictor exists in every mode except `Base`, where the
    /// generator owns its output projection outright.
    pub fn has_predictor(&self) -> bool {
        !matches!(self, AblationMode::Base)
    }

    /// In `NoEmbedding` the predictor updates jointly with the generator.
    pub fn predictor_updates_with_generator(&self) -> bool {
        matches!(self, AblationMode::NoEmbedding)
    }

    pub fn generator_mask(&self) -> MaskMode {
        if self.has_auto_objective() {
            MaskMode::Causal
        } else {
            MaskMode::Bidirectional
        }
    }

    pub fn all() -> [AblationMode; 6] {
        [
            AblationMode::Full,
            AblationMode::NoMl,
            AblationMode::NoMmAuto,
            AblationMode::NoEmbedding,
            AblationMode::NoMm,
            AblationMode::Base,
        ]
    }
}

// ── Components ───────────────────────────────────────────────────────

/// Causal transformer mapping real sequences to latent embeddings.
pub struct Embedder<T: Scalar> {
    pub input_proj: Linear<T>,
    pub layers: Vec<TransformerLayer<T>>,
    pub positions: Tensor<T>,
}

impl<T: Scalar> Embedder<T> {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        Ok(Embedder {
            input_proj: Linear::new(rng, cfg.features, cfg.model_dim),
            layers: (0..cfg.layers)
                .map(|_| TransformerLayer::new(rng, cfg.model_dim, cfg.heads, cfg.ff_hidden))
                .collect(),
            positions: sinusoidal_positions(cfg.seq_len, cfg.model_dim)?,
        })
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Tensor<T> {
        let mut h = tape.add(&self.input_proj.forward(tape, x), &self.positions);
        for layer in &self.layers {
            h = layer.forward(tape, &h, MaskMode::Causal);
        }
        h
    }

    pub fn collect_params(&self, out: &mut Vec<(String, Tensor<T>)>) {
        self.input_proj.collect_params("embedder.input_proj", out);
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&format!("embedder.layers.{i}"), out);
        }
    }
}

/// Shared linear map from latent space back to data space.
pub struct Predictor<T: Scalar> {
    pub proj: Linear<T>,
}

impl<T: Scalar> Predictor<T> {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        Predictor {
            proj: Linear::new(rng, cfg.model_dim, cfg.features),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, latents: &Tensor<T>) -> Tensor<T> {
        self.proj.forward(tape, latents)
    }

    pub fn collect_params(&self, out: &mut Vec<(String, Tensor<T>)>) {
        self.proj.collect_params("predictor.proj", out);
    }
}

/// Transformer generator. The generation path projects noise into the
/// model dimension; the auxiliary path (masked modelling, or the
/// teacher-forced objective in the autoregressive ablation) has its own
/// input and output projections.
pub struct Generator<T: Scalar> {
    pub noise_proj: Linear<T>,
    pub layers: Vec<TransformerLayer<T>>,
    pub positions: Tensor<T>,
    pub mask_mode: MaskMode,
    pub mask_vector: Option<Tensor<T>>,
    pub aux_in_proj: Option<Linear<T>>,
    pub aux_out_proj: Option<Linear<T>>,
    /// `Base` ablation only: output projection replacing the shared predictor.
    pub out_proj: Option<Linear<T>>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig, mode: AblationMode) -> Result<Self> {
        Ok(Generator {
            noise_proj: Linear::new(rng, cfg.noise_dim, cfg.model_dim),
            layers: (0..cfg.layers)
                .map(|_| TransformerLayer::new(rng, cfg.model_dim, cfg.heads, cfg.ff_hidden))
                .collect(),
            positions: sinusoidal_positions(cfg.seq_len, cfg.model_dim)?,
            mask_mode: mode.generator_mask(),
            mask_vector: mode
                .has_masked_modelling()
                .then(|| learnable_vector(rng, cfg.model_dim)),
            aux_in_proj: mode
                .has_aux_head()
                .then(|| Linear::new(rng, cfg.features, cfg.model_dim)),
            aux_out_proj: mode
                .has_aux_head()
                .then(|| Linear::new(rng, cfg.model_dim, cfg.features)),
            out_proj: (!mode.has_predictor())
                .then(|| Linear::new(rng, cfg.model_dim, cfg.features)),
        })
    }

    fn trunk(&self, tape: &Tape<T>, h: Tensor<T>) -> Tensor<T> {
        let mut h = h;
        for layer in &self.layers {
            h = layer.forward(tape, &h, self.mask_mode);
        }
        h
    }

    /// Generation path latents from noise `[B, T, noise_dim]`.
    pub fn latents(&self, tape: &Tape<T>, z: &Tensor<T>) -> Tensor<T> {
        let h = tape.add(&self.noise_proj.forward(tape, z), &self.positions);
        self.trunk(tape, h)
    }

    /// Masked-modelling path: project real data, swap masked positions for
    /// the learnable MASK vector, add positions, run the trunk, project out.
    /// `mask` is row-major `[B, T]`.
    pub fn masked_reconstruction(
        &self,
        tape: &Tape<T>,
        x: &Tensor<T>,
        mask: &[bool],
    ) -> Tensor<T> {
        let shape = x.shape();
        let (b, t) = (shape[0], shape[1]);
        assert_eq!(mask.len(), b * t, "mask length {} != B*T {}", mask.len(), b * t);
        let mask_vec = self
            .mask_vector
            .as_ref()
            .expect("masked_reconstruction requires a MASK vector in this mode");
        let aux_in = self.aux_in_proj.as_ref().expect("aux input projection missing");
        let aux_out = self.aux_out_proj.as_ref().expect("aux output projection missing");

        let proj = aux_in.forward(tape, x);
        let masked_f: Vec<T> = mask.iter().map(|&m| if m { T::ONE } else { T::ZERO }).collect();
        let keep_f: Vec<T> = mask.iter().map(|&m| if m { T::ZERO } else { T::ONE }).collect();
        let masked_t = Tensor::new(&[b, t, 1], masked_f);
        let keep_t = Tensor::new(&[b, t, 1], keep_f);
        let swapped = tape.add(&tape.mul(&proj, &keep_t), &tape.mul(mask_vec, &masked_t));
        let h = tape.add(&swapped, &self.positions);
        aux_out.forward(tape, &self.trunk(tape, h))
    }

    /// Teacher-forced path for the autoregressive ablation: real inputs in,
    /// one-step-ahead predictions out of the auxiliary head.
    pub fn auto_prediction(&self, tape: &Tape<T>, x: &Tensor<T>) -> Tensor<T> {
        let aux_in = self.aux_in_proj.as_ref().expect("aux input projection missing");
        let aux_out = self.aux_out_proj.as_ref().expect("aux output projection missing");
        let h = tape.add(&aux_in.forward(tape, x), &self.positions);
        aux_out.forward(tape, &self.trunk(tape, h))
    }

    pub fn collect_params(&self, out: &mut Vec<(String, Tensor<T>)>) {
        self.noise_proj.collect_params("generator.noise_proj", out);
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&format!("generator.layers.{i}"), out);
        }
        if let Some(m) = &self.mask_vector {
            out.push(("generator.mask_vector".to_string(), m.clone()));
        }
        if let Some(p) = &self.aux_in_proj {
            p.collect_params("generator.aux_in_proj", out);
        }
        if let Some(p) = &self.aux_out_proj {
            p.collect_params("generator.aux_out_proj", out);
        }
        if let Some(p) = &self.out_proj {
            p.collect_params("generator.out_proj", out);
        }
    }
}

/// Bidirectional transformer classifier over whole sequences. A learnable
/// CLS vector is prepended, so the trunk runs on length `T + 1`; the CLS
/// position's final embedding maps to one raw score per sequence.
pub struct Discriminator<T: Scalar> {
    pub input_proj: Linear<T>,
    pub cls_vector: Tensor<T>,
    pub layers: Vec<TransformerLayer<T>>,
    pub positions: Tensor<T>,
    pub head: Linear<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        Ok(Discriminator {
            input_proj: Linear::new(rng, cfg.features, cfg.model_dim),
            cls_vector: learnable_vector(rng, cfg.model_dim),
            layers: (0..cfg.layers)
                .map(|_| TransformerLayer::new(rng, cfg.model_dim, cfg.heads, cfg.ff_hidden))
                .collect(),
            positions: sinusoidal_positions(cfg.seq_len + 1, cfg.model_dim)?,
            head: Linear::new(rng, cfg.model_dim, 1),
        })
    }

    /// Raw scores `[B, 1]`, no squashing: the LS-GAN losses operate on raw
    /// outputs.
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Tensor<T> {
        let shape = x.shape();
        let b = shape[0];
        let d = self.cls_vector.numel();
        let proj = self.input_proj.forward(tape, x);
        let ones = Tensor::full(&[b, 1, 1], T::ONE);
        let cls = tape.mul(&self.cls_vector, &ones); // [B, 1, d]
        let seq = tape.concat(&[&cls, &proj], 1);
        let mut h = tape.add(&seq, &self.positions);
        for layer in &self.layers {
            h = layer.forward(tape, &h, MaskMode::Bidirectional);
        }
        let cls_out = tape.reshape(&tape.slice(&h, 1, 0, 1), &[b, d]);
        self.head.forward(tape, &cls_out)
    }

    pub fn collect_params(&self, out: &mut Vec<(String, Tensor<T>)>) {
        self.input_proj.collect_params("discriminator.input_proj", out);
        out.push(("discriminator.cls_vector".to_string(), self.cls_vector.clone()));
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&format!("discriminator.layers.{i}"), out);
        }
        self.head.collect_params("discriminator.head", out);
    }
}

// ── The assembled model ──────────────────────────────────────────────

pub struct TstGan<T: Scalar> {
    pub config: ModelConfig,
    pub mode: AblationMode,
    pub embedder: Option<Embedder<T>>,
    pub predictor: Option<Predictor<T>>,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Scalar> TstGan<T> {
    pub fn new(rng: &mut ChaCha8Rng, cfg: ModelConfig, mode: AblationMode) -> Result<Self> {
        cfg.validate()?;
        let embedder = if mode.has_embedder() {
            Some(Embedder::new(rng, &cfg)?)
        } else {
            None
        };
        let predictor = mode.has_predictor().then(|| Predictor::new(rng, &cfg));
        let generator = Generator::new(rng, &cfg, mode)?;
        let discriminator = Discriminator::new(rng, &cfg)?;
        Ok(TstGan {
            config: cfg,
            mode,
            embedder,
            predictor,
            generator,
            discriminator,
        })
    }

    fn check_batch(&self, x: &Tensor<T>, what: &str) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.config.seq_len || s[2] != self.config.features {
            return Err(Error::Config(format!(
                "{what}: batch shape {:?} does not match config [_, {}, {}]",
                s, self.config.seq_len, self.config.features
            )));
        }
        Ok(())
    }

    /// Latent embeddings plus one-step-ahead predictions for a real batch.
    /// `x_hat[t]` predicts `x[t+1]`; the path is causal.
    pub fn embed_and_predict(
        &self,
        tape: &Tape<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_batch(x, "embed_and_predict")?;
        let embedder = self
            .embedder
            .as_ref()
            .ok_or_else(|| Error::Config("this ablation has no embedder".into()))?;
        let predictor = self
            .predictor
            .as_ref()
            .ok_or_else(|| Error::Config("this ablation has no predictor".into()))?;
        let h = embedder.forward(tape, x);
        let x_hat = predictor.forward(tape, &h);
        Ok((h, x_hat))
    }

    /// Synthetic batch from noise `[B, T, noise_dim]`: generator latents
    /// mapped through the shared predictor (or the generator's own output
    /// projection in the `Base` ablation).
    pub fn generate(&self, tape: &Tape<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let s = z.shape();
        if s.len() != 3 || s[1] != self.config.seq_len || s[2] != self.config.noise_dim {
            return Err(Error::Config(format!(
                "generate: noise shape {:?} does not match config [_, {}, {}]",
                s, self.config.seq_len, self.config.noise_dim
            )));
        }
        let latents = self.generator.latents(tape, z);
        Ok(match (&self.predictor, &self.generator.out_proj) {
            (Some(p), _) => p.forward(tape, &latents),
            (None, Some(op)) => op.forward(tape, &latents),
            (None, None) => unreachable!("model built without any output projection"),
        })
    }

    /// Masked-modelling reconstruction and its loss. `mask` is `[B, T]`
    /// row-major; every sequence must have at least one masked position
    /// (the batch sampler redraws until that holds).
    pub fn masked_modelling(
        &self,
        tape: &Tape<T>,
        x: &Tensor<T>,
        mask: &[bool],
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_batch(x, "masked_modelling")?;
        let x_bar = self.generator.masked_reconstruction(tape, x, mask);
        let loss = mm_loss(tape, x, &x_bar, mask);
        Ok((x_bar, loss))
    }

    /// Teacher-forced one-step objective for the autoregressive ablation:
    /// the generator reads the real sequence causally and its auxiliary
    /// head predicts the next step; scored like the supervised loss.
    pub fn auto_loss(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(x, "auto_loss")?;
        let pred = self.generator.auto_prediction(tape, x);
        Ok(loss_supervised(tape, x, &pred))
    }

    pub fn discriminate(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(x, "discriminate")?;
        Ok(self.discriminator.forward(tape, x))
    }

    /// All parameters with their checkpoint names, grouped by component
    /// prefix. The name set is exactly the ablation's declared wiring.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(e) = &self.embedder {
            e.collect_params(&mut out);
        }
        if let Some(p) = &self.predictor {
            p.collect_params(&mut out);
        }
        self.generator.collect_params(&mut out);
        self.discriminator.collect_params(&mut out);
        out
    }

    pub fn embedder_params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        if let Some(e) = &self.embedder {
            e.collect_params(&mut out);
        }
        out.into_iter().map(|(_, p)| p).collect()
    }

    pub fn predictor_params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        if let Some(p) = &self.predictor {
            p.collect_params(&mut out);
        }
        out.into_iter().map(|(_, p)| p).collect()
    }

    pub fn generator_params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.generator.collect_params(&mut out);
        out.into_iter().map(|(_, p)| p).collect()
    }

    pub fn discriminator_params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.discriminator.collect_params(&mut out);
        out.into_iter().map(|(_, p)| p).collect()
    }

    /// Flat snapshot of the predictor parameter vector, for gate assertions.
    pub fn predictor_snapshot(&self) -> Vec<T> {
        self.predictor_params()
            .iter()
            .flat_map(|p| p.to_vec())
            .collect()
    }
}

// ── Losses ───────────────────────────────────────────────────────────

/// Supervised one-step-ahead loss: mean over batch and the first `T-1`
/// positions of `‖x[t+1] − x̂[t]‖₂`. The prediction at the final position
/// has no target and is ignored.
pub fn loss_supervised<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>, x_hat: &Tensor<T>) -> Tensor<T> {
    let shape = x.shape();
    assert_eq!(
        shape,
        x_hat.shape(),
        "loss_supervised: shapes {:?} and {:?} differ",
        shape,
        x_hat.shape()
    );
    let t = shape[1];
    assert!(t >= 2, "loss_supervised: needs T >= 2, got T = {t}");
    let target = tape.slice(x, 1, 1, t - 1);
    let pred = tape.slice(x_hat, 1, 0, t - 1);
    let diff = tape.sub(&target, &pred);
    let norms = tape.sqrt(&tape.sum_axis(&tape.mul(&diff, &diff), 2, false));
    tape.mean(&norms)
}

/// Masked-modelling loss: per sequence, the mean over masked positions of
/// `‖x[t] − x̄[t]‖₂`, then averaged over the batch. Unmasked positions
/// contribute exactly zero, in value and in gradient.
pub fn mm_loss<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    x_bar: &Tensor<T>,
    mask: &[bool],
) -> Tensor<T> {
    let shape = x.shape();
    let (b, t) = (shape[0], shape[1]);
    assert_eq!(mask.len(), b * t, "mm_loss: mask length mismatch");
    let diff = tape.sub(x, x_bar);
    let norms = tape.sqrt(&tape.sum_axis(&tape.mul(&diff, &diff), 2, false)); // [B, T]
    let mask_f: Vec<T> = mask.iter().map(|&m| if m { T::ONE } else { T::ZERO }).collect();
    let inv_counts: Vec<T> = (0..b)
        .map(|i| {
            let c = mask[i * t..(i + 1) * t].iter().filter(|&&m| m).count();
            assert!(c > 0, "mm_loss: sequence {i} has no masked positions");
            T::ONE / T::from_f64(c as f64)
        })
        .collect();
    let picked = tape.mul(&norms, &Tensor::new(&[b, t], mask_f));
    let per_seq = tape.mul(
        &tape.sum_axis(&picked, 1, false),
        &Tensor::new(&[b], inv_counts),
    );
    tape.mean(&per_seq)
}

/// LS-GAN discriminator loss: `E[(D(x) − 1)²] + E[D(x̃)²]`. The fake
/// scores must come from a detached batch so no gradient reaches the
/// generator.
pub fn loss_gan_d<T: Scalar>(
    tape: &Tape<T>,
    scores_real: &Tensor<T>,
    scores_fake: &Tensor<T>,
) -> Tensor<T> {
    let r = tape.add_scalar(scores_real, -T::ONE);
    let real_term = tape.mean(&tape.mul(&r, &r));
    let fake_term = tape.mean(&tape.mul(scores_fake, scores_fake));
    tape.add(&real_term, &fake_term)
}

/// LS-GAN generator loss: `½·E[(D(x̃) − 1)²]`.
pub fn loss_gan_g<T: Scalar>(tape: &Tape<T>, scores_fake: &Tensor<T>) -> Tensor<T> {
    let f = tape.add_scalar(scores_fake, -T::ONE);
    tape.mul_scalar(&tape.mean(&tape.mul(&f, &f)), T::from_f64(0.5))
}

/// Moment loss: sequences are paired by batch index; per feature, the mean
/// and (population) standard deviation are taken over the time axis, and
/// the loss is the mean over batch and features of
/// `|μ_real − μ_synth| + |σ_real − σ_synth|`.
pub fn loss_moment<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>, x_tilde: &Tensor<T>) -> Tensor<T> {
    assert_eq!(
        x.shape(),
        x_tilde.shape(),
        "loss_moment: shapes {:?} and {:?} differ",
        x.shape(),
        x_tilde.shape()
    );
    let stats = |y: &Tensor<T>| {
        let mu_keep = tape.mean_axis(y, 1, true); // [B, 1, m]
        let centered = tape.sub(y, &mu_keep);
        let var = tape.mean_axis(&tape.mul(&centered, &centered), 1, false); // [B, m]
        let sigma = tape.sqrt(&var);
        let mu = tape.sum_axis(&mu_keep, 1, false); // squeeze to [B, m]
        (mu, sigma)
    };
    let (mu_r, sig_r) = stats(x);
    let (mu_s, sig_s) = stats(x_tilde);
    let dmu = tape.mean(&tape.abs(&tape.sub(&mu_r, &mu_s)));
    let dsig = tape.mean(&tape.abs(&tape.sub(&sig_r, &sig_s)));
    tape.add(&dmu, &dsig)
}

#[cfg(test)]
mod tests;
