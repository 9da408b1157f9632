//! Neural building blocks shared by the model components and by the
//! post-hoc evaluation networks, plus the Adam optimizer.
//!
//! Initialization is Xavier/Glorot uniform for projection weights and zero
//! for biases, drawn from a caller-supplied seeded generator so the same
//! seed reproduces identical parameters bit for bit.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn xavier_uniform<T: Scalar>(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    fan_out: usize,
    shape: &[usize],
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::param(shape, data)
}

/// Learnable vector in the model dimension ([CLS], [MASK]), small uniform.
pub fn learnable_vector<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize) -> Tensor<T> {
    let data: Vec<T> = (0..dim)
        .map(|_| T::from_f64(rng.gen_range(-0.05..0.05)))
        .collect();
    Tensor::param(&[dim], data)
}

/// Deterministic sinusoidal position embeddings, shape `[len, dim]`:
/// `PE[p, 2i] = sin(p / 10000^{2i/dim})`, `PE[p, 2i+1] = cos(…)`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, dim: usize) -> Result<Tensor<T>> {
    if dim % 2 != 0 {
        return Err(Error::Config(format!(
            "position embeddings need an even model dimension, got {dim}"
        )));
    }
    let mut data = vec![T::ZERO; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let rate = (pos as f64) / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[pos * dim + 2 * i] = T::from_f64(rate.sin());
            data[pos * dim + 2 * i + 1] = T::from_f64(rate.cos());
        }
    }
    Ok(Tensor::new(&[len, dim], data))
}

// ── Linear ───────────────────────────────────────────────────────────

pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: xavier_uniform(rng, in_dim, out_dim, &[in_dim, out_dim]),
            bias: Tensor::param(&[out_dim], vec![T::ZERO; out_dim]),
        }
    }

    /// `x · weight + bias`, applied over the last axis.
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Tensor<T> {
        tape.add(&tape.matmul(x, &self.weight), &self.bias)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

// ── Attention ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MaskMode {
    /// Position `t` attends to positions `<= t` only.
    Causal,
    Bidirectional,
}

pub struct MultiHeadAttention<T: Scalar> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub heads: usize,
    pub dim: usize,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize) -> Self {
        assert!(
            dim % heads == 0,
            "attention: model dim {dim} not divisible by {heads} heads"
        );
        MultiHeadAttention {
            wq: Linear::new(rng, dim, dim),
            wk: Linear::new(rng, dim, dim),
            wv: Linear::new(rng, dim, dim),
            wo: Linear::new(rng, dim, dim),
            heads,
            dim,
        }
    }

    /// Scaled dot-product attention over `[B, T, d]`. The causal variant
    /// adds `-inf` to future scores, which softmax turns into exactly-zero
    /// weights, so outputs at `t` carry no dependence on positions `> t`.
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: MaskMode) -> Tensor<T> {
        let shape = x.shape();
        assert_eq!(
            shape.len(),
            3,
            "attention: expected [batch, time, dim], got {shape:?}"
        );
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        assert_eq!(
            d, self.dim,
            "attention: input dim {d} does not match layer dim {}",
            self.dim
        );
        let h = self.heads;
        let dh = d / h;
        let split = |y: &Tensor<T>| {
            let y = tape.reshape(y, &[b, t, h, dh]);
            tape.transpose(&y, 1, 2) // [B, H, T, dh]
        };
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        // Scaling Q up front avoids touching the full [B, H, T, T] scores.
        let q = tape.mul_scalar(&split(&self.wq.forward(tape, x)), scale);
        let k = split(&self.wk.forward(tape, x));
        let v = split(&self.wv.forward(tape, x));
        let kt = tape.transpose(&k, 2, 3); // [B, H, dh, T]
        let mut scores = tape.matmul(&q, &kt); // [B, H, T, T]
        if mode == MaskMode::Causal {
            scores = tape.add(&scores, &causal_mask::<T>(t));
        }
        let weights = tape.softmax(&scores, 3);
        let ctx = tape.matmul(&weights, &v); // [B, H, T, dh]
        let merged = tape.reshape(&tape.transpose(&ctx, 1, 2), &[b, t, d]);
        self.wo.forward(tape, &merged)
    }

    /// Attention weight matrix `[B, H, T, T]` for inspection in tests.
    pub fn attention_weights(&self, tape: &Tape<T>, x: &Tensor<T>, mode: MaskMode) -> Tensor<T> {
        let shape = x.shape();
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let h = self.heads;
        let dh = d / h;
        let split = |y: &Tensor<T>| tape.transpose(&tape.reshape(y, &[b, t, h, dh]), 1, 2);
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let q = tape.mul_scalar(&split(&self.wq.forward(tape, x)), scale);
        let k = split(&self.wk.forward(tape, x));
        let kt = tape.transpose(&k, 2, 3);
        let mut scores = tape.matmul(&q, &kt);
        if mode == MaskMode::Causal {
            scores = tape.add(&scores, &causal_mask::<T>(t));
        }
        tape.softmax(&scores, 3)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.wq.collect_params(&format!("{prefix}.wq"), out);
        self.wk.collect_params(&format!("{prefix}.wk"), out);
        self.wv.collect_params(&format!("{prefix}.wv"), out);
        self.wo.collect_params(&format!("{prefix}.wo"), out);
    }
}

fn causal_mask<T: Scalar>(t: usize) -> Tensor<T> {
    let mut data = vec![T::ZERO; t * t];
    for row in 0..t {
        for col in row + 1..t {
            data[row * t + col] = T::neg_infinity();
        }
    }
    Tensor::new(&[t, t], data)
}

// ── Transformer layer ────────────────────────────────────────────────

/// Post-norm transformer block: `LN(x + Attn(x))`, then `LN(y + FF(y))`
/// with a GELU two-layer feedforward.
pub struct TransformerLayer<T: Scalar> {
    pub attn: MultiHeadAttention<T>,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
}

impl<T: Scalar> TransformerLayer<T> {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize, hidden: usize) -> Self {
        TransformerLayer {
            attn: MultiHeadAttention::new(rng, dim, heads),
            ff1: Linear::new(rng, dim, hidden),
            ff2: Linear::new(rng, hidden, dim),
            ln1_gain: Tensor::param(&[dim], vec![T::ONE; dim]),
            ln1_bias: Tensor::param(&[dim], vec![T::ZERO; dim]),
            ln2_gain: Tensor::param(&[dim], vec![T::ONE; dim]),
            ln2_bias: Tensor::param(&[dim], vec![T::ZERO; dim]),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: MaskMode) -> Tensor<T> {
        let attn_out = self.attn.forward(tape, x, mode);
        let y = tape.layer_norm(&tape.add(x, &attn_out), &self.ln1_gain, &self.ln1_bias, 1e-5);
        let ff = self.ff2.forward(tape, &tape.gelu(&self.ff1.forward(tape, &y)));
        tape.layer_norm(&tape.add(&y, &ff), &self.ln2_gain, &self.ln2_bias, 1e-5)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.attn.collect_params(&format!("{prefix}.attn"), out);
        self.ff1.collect_params(&format!("{prefix}.ff1"), out);
        self.ff2.collect_params(&format!("{prefix}.ff2"), out);
        out.push((format!("{prefix}.ln1.gain"), self.ln1_gain.clone()));
        out.push((format!("{prefix}.ln1.bias"), self.ln1_bias.clone()));
        out.push((format!("{prefix}.ln2.gain"), self.ln2_gain.clone()));
        out.push((format!("{prefix}.ln2.bias"), self.ln2_bias.clone()));
    }
}

// ── GRU ──────────────────────────────────────────────────────────────

pub struct GruCell<T: Scalar> {
    pub wz: Tensor<T>,
    pub wr: Tensor<T>,
    pub wh: Tensor<T>,
    pub uz: Tensor<T>,
    pub ur: Tensor<T>,
    pub uh: Tensor<T>,
    pub bz: Tensor<T>,
    pub br: Tensor<T>,
    pub bh: Tensor<T>,
    pub hidden: usize,
}

impl<T: Scalar> GruCell<T> {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize) -> Self {
        let w = |rng: &mut ChaCha8Rng, i, o| xavier_uniform(rng, i, o, &[i, o]);
        GruCell {
            wz: w(rng, in_dim, hidden),
            wr: w(rng, in_dim, hidden),
            wh: w(rng, in_dim, hidden),
            uz: w(rng, hidden, hidden),
            ur: w(rng, hidden, hidden),
            uh: w(rng, hidden, hidden),
            bz: Tensor::param(&[hidden], vec![T::ZERO; hidden]),
            br: Tensor::param(&[hidden], vec![T::ZERO; hidden]),
            bh: Tensor::param(&[hidden], vec![T::ZERO; hidden]),
            hidden,
        }
    }

    /// One step of the gate equations. Convention used throughout:
    /// `h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ h̃_t`.
    pub fn step(&self, tape: &Tape<T>, xt: &Tensor<T>, h_prev: &Tensor<T>) -> Tensor<T> {
        let lin = |w: &Tensor<T>, u: &Tensor<T>, b: &Tensor<T>| {
            tape.add(&tape.add(&tape.matmul(xt, w), &tape.matmul(h_prev, u)), b)
        };
        let z = tape.sigmoid(&lin(&self.wz, &self.uz, &self.bz));
        let r = tape.sigmoid(&lin(&self.wr, &self.ur, &self.br));
        let rh = tape.mul(&r, h_prev);
        let candidate = tape.tanh(&tape.add(
            &tape.add(&tape.matmul(xt, &self.wh), &tape.matmul(&rh, &self.uh)),
            &self.bh,
        ));
        // (1 - z) ⊙ h_prev + z ⊙ candidate
        let one_minus_z = tape.add_scalar(&tape.mul_scalar(&z, -T::ONE), T::ONE);
        tape.add(&tape.mul(&one_minus_z, h_prev), &tape.mul(&z, &candidate))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (n, p) in [
            ("wz", &self.wz),
            ("wr", &self.wr),
            ("wh", &self.wh),
            ("uz", &self.uz),
            ("ur", &self.ur),
            ("uh", &self.uh),
            ("bz", &self.bz),
            ("br", &self.br),
            ("bh", &self.bh),
        ] {
            out.push((format!("{prefix}.{n}"), p.clone()));
        }
    }
}

/// Stacked GRU (two layers in the evaluation harness) with a linear output
/// head applied to every hidden state.
pub struct GruNetwork<T: Scalar> {
    pub cells: Vec<GruCell<T>>,
    pub head: Linear<T>,
}

impl<T: Scalar> GruNetwork<T> {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize, layers: usize, out_dim: usize) -> Self {
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let input = if l == 0 { in_dim } else { hidden };
            cells.push(GruCell::new(rng, input, hidden));
        }
        GruNetwork {
            cells,
            head: Linear::new(rng, hidden, out_dim),
        }
    }

    /// Hidden states of the top cell, `[B, T, hidden]`. `h0` per layer is
    /// zero unless provided.
    pub fn hidden_states(
        &self,
        tape: &Tape<T>,
        x: &Tensor<T>,
        h0: Option<&[Tensor<T>]>,
    ) -> Tensor<T> {
        let shape = x.shape();
        assert_eq!(shape.len(), 3, "gru: expected [batch, time, features], got {shape:?}");
        let (b, t, _) = (shape[0], shape[1], shape[2]);
        let mut layer_input = x.clone();
        let mut top = layer_input.clone();
        for (li, cell) in self.cells.iter().enumerate() {
            let mut h = match h0 {
                Some(states) => states[li].clone(),
                None => Tensor::zeros(&[b, cell.hidden]),
            };
            let mut steps: Vec<Tensor<T>> = Vec::with_capacity(t);
            for ti in 0..t {
                let xt = tape.reshape(&tape.slice(&layer_input, 1, ti, 1), &[b, x_dim(&layer_input)]);
                h = cell.step(tape, &xt, &h);
                steps.push(tape.reshape(&h, &[b, 1, cell.hidden]));
            }
            let refs: Vec<&Tensor<T>> = steps.iter().collect();
            top = tape.concat(&refs, 1);
            layer_input = top.clone();
        }
        top
    }

    /// Head applied to every timestep: `[B, T, out_dim]`.
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Tensor<T> {
        let h = self.hidden_states(tape, x, None);
        self.head.forward(tape, &h)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut named = Vec::new();
        for (i, c) in self.cells.iter().enumerate() {
            c.collect_params(&format!("cell{i}"), &mut named);
        }
        self.head.collect_params("head", &mut named);
        named.into_iter().map(|(_, p)| p).collect()
    }
}

fn x_dim<T: Scalar>(x: &Tensor<T>) -> usize {
    *x.shape().last().unwrap()
}

// ── Adam ─────────────────────────────────────────────────────────────

struct AdamSlot<T: Scalar> {
    param: Tensor<T>,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

/// Adam with bias correction. Parameters whose gradient is absent are
/// skipped entirely — their moments and step counters do not advance.
/// That property implements the predictor gradient gate: a component is
/// frozen in a sub-step simply by not being in the stepped optimizer.
pub struct Adam<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    slots: Vec<AdamSlot<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: Vec<Tensor<T>>, lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr: T::from_f64(lr),
            beta1: T::from_f64(beta1),
            beta2: T::from_f64(beta2),
            eps: T::from_f64(1e-8),
            slots: params
                .into_iter()
                .map(|param| {
                    let n = param.numel();
                    AdamSlot {
                        param,
                        m: vec![T::ZERO; n],
                        v: vec![T::ZERO; n],
                        step: 0,
                    }
                })
                .collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = T::from_f64(lr);
    }

    /// Apply one bias-corrected update to every parameter that has a
    /// gradient. Gradients are left untouched; the caller resets them.
    pub fn step(&mut self) {
        for slot in &mut self.slots {
            let Some(grad) = slot.param.grad() else {
                continue;
            };
            slot.step += 1;
            let bc1 = T::ONE - pow_int(self.beta1, slot.step);
            let bc2 = T::ONE - pow_int(self.beta2, slot.step);
            let mut data = slot.param.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                slot.m[i] = self.beta1 * slot.m[i] + (T::ONE - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (T::ONE - self.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn zero_grads(&self) {
        for slot in &self.slots {
            slot.param.zero_grad();
        }
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.slots.iter().map(|s| s.param.clone()).collect()
    }
}

fn pow_int<T: Scalar>(base: T, exp: u64) -> T {
    let mut acc = T::ONE;
    let mut b = base;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            acc *= b;
        }
        b *= b;
        e >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn sinusoidal_row_zero_alternates_zero_one() {
        let pe = sinusoidal_positions::<f32>(4, 6).unwrap();
        let d = pe.data();
        for i in 0..3 {
            assert!((d[2 * i] - 0.0).abs() < 1e-7);
            assert!((d[2 * i + 1] - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn sinusoidal_first_position_first_channel_is_sin_one() {
        let pe = sinusoidal_positions::<f32>(4, 6).unwrap();
        let d = pe.data();
        assert!((d[6] - 1f32.sin()).abs() < 1e-6, "PE[1,0] = {}", d[6]);
    }

    #[test]
    fn sinusoidal_entries_bounded() {
        let pe = sinusoidal_positions::<f32>(24, 32).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn sinusoidal_rejects_odd_dim() {
        assert!(sinusoidal_positions::<f32>(4, 5).is_err());
    }

    #[test]
    fn causal_attention_ignores_future_positions_bitwise() {
        let mut r = rng(5);
        let attn = MultiHeadAttention::<f32>::new(&mut r, 8, 2);
        let tape = Tape::inference();
        let base: Vec<f32> = (0..2 * 8).map(|i| (i as f32 * 0.37).sin()).collect();
        let x1 = Tensor::new(&[1, 2, 8], base.clone());
        let mut bumped = base.clone();
        for v in &mut bumped[8..16] {
            *v += 3.0; // perturb position 2 only
        }
        let x2 = Tensor::new(&[1, 2, 8], bumped);
        let y1 = attn.forward(&tape, &x1, MaskMode::Causal).to_vec();
        let y2 = attn.forward(&tape, &x2, MaskMode::Causal).to_vec();
        assert_eq!(&y1[..8], &y2[..8], "position 1 output changed under future perturbation");
        assert_ne!(&y1[8..], &y2[8..]);
    }

    #[test]
    fn single_position_bidirectional_equals_causal() {
        let mut r = rng(6);
        let attn = MultiHeadAttention::<f32>::new(&mut r, 8, 2);
        let tape = Tape::inference();
        let x = Tensor::new(&[2, 1, 8], (0..16).map(|i| (i as f32) * 0.1).collect());
        let a = attn.forward(&tape, &x, MaskMode::Causal).to_vec();
        let b = attn.forward(&tape, &x, MaskMode::Bidirectional).to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn attention_weight_rows_sum_to_one() {
        let mut r = rng(7);
        let attn = MultiHeadAttention::<f32>::new(&mut r, 8, 4);
        let tape = Tape::inference();
        let x = Tensor::new(&[2, 5, 8], (0..80).map(|i| ((i * 37 % 19) as f32) * 0.21 - 1.0).collect());
        for mode in [MaskMode::Causal, MaskMode::Bidirectional] {
            let w = attn.attention_weights(&tape, &x, mode);
            let data = w.to_vec();
            for row in data.chunks(5) {
                let s: f32 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
            }
        }
    }

    #[test]
    fn transformer_layer_preserves_shape_and_stays_finite() {
        let mut r = rng(8);
        let layer = TransformerLayer::<f32>::new(&mut r, 8, 2, 32);
        let tape = Tape::inference();
        let x = Tensor::new(&[3, 4, 8], (0..96).map(|i| ((i % 21) as f32) - 10.0).collect());
        let y = layer.forward(&tape, &x, MaskMode::Bidirectional);
        assert_eq!(y.shape(), vec![3, 4, 8]);
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gru_all_zero_weights_give_zero_outputs() {
        let mut r = rng(9);
        let mut net = GruNetwork::<f32>::new(&mut r, 2, 2, 2, 1);
        for p in net.params() {
            let n = p.numel();
            p.copy_from(&vec![0.0; n]);
        }
        net.head = Linear::new(&mut r, 2, 1);
        let tape = Tape::inference();
        let x = Tensor::new(&[1, 3, 2], vec![1.0, -2.0, 0.5, 4.0, -1.0, 2.0]);
        let h = net.hidden_states(&tape, &x, None);
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_output_shape_matches_hidden() {
        let mut r = rng(10);
        let net = GruNetwork::<f32>::new(&mut r, 3, 3, 2, 1);
        let tape = Tape::inference();
        let x = Tensor::new(&[2, 4, 3], (0..24).map(|i| i as f32 * 0.05).collect());
        let h = net.hidden_states(&tape, &x, None);
        assert_eq!(h.shape(), vec![2, 4, 3]);
        let y = net.forward(&tape, &x);
        assert_eq!(y.shape(), vec![2, 4, 1]);
    }

    /// Independent scalar implementation of the gate equations for one cell
    /// and one step, two features.
    #[test]
    fn gru_single_step_matches_scalar_oracle() {
        let mut r = rng(11);
        let cell = GruCell::<f64>::new(&mut r, 2, 2);
        let tape = Tape::inference();
        let x = [0.3, -0.7];
        let h_prev = [0.25, -0.1];
        let xt = Tensor::new(&[1, 2], x.to_vec());
        let hp = Tensor::new(&[1, 2], h_prev.to_vec());
        let h = cell.step(&tape, &xt, &hp).to_vec();

        let wz = cell.wz.to_vec();
        let wr = cell.wr.to_vec();
        let wh = cell.wh.to_vec();
        let uz = cell.uz.to_vec();
        let ur = cell.ur.to_vec();
        let uh = cell.uh.to_vec();
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..2 {
            let zs = sigmoid(x[0] * wz[j] + x[1] * wz[2 + j] + h_prev[0] * uz[j] + h_prev[1] * uz[2 + j]);
            let rs = sigmoid(x[0] * wr[j] + x[1] * wr[2 + j] + h_prev[0] * ur[j] + h_prev[1] * ur[2 + j]);
            let r0 = sigmoid(x[0] * wr[0] + x[1] * wr[2] + h_prev[0] * ur[0] + h_prev[1] * ur[2]);
            let r1 = sigmoid(x[0] * wr[1] + x[1] * wr[3] + h_prev[0] * ur[1] + h_prev[1] * ur[3]);
            let _ = rs;
            let cand = (x[0] * wh[j]
                + x[1] * wh[2 + j]
                + (r0 * h_prev[0]) * uh[j]
                + (r1 * h_prev[1]) * uh[2 + j])
                .tanh();
            let expect = (1.0 - zs) * h_prev[j] + zs * cand;
            assert!(
                (h[j] - expect).abs() < 1e-12,
                "hidden {j}: {} vs oracle {expect}",
                h[j]
            );
        }
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With bias correction, the first update is -lr · g/(|g| + ε') ≈ -lr·sign(g).
        let p = Tensor::param(&[3], vec![1.0f64, 1.0, 1.0]);
        p.accumulate_grad(&[0.3, -2.0, 7.0]);
        let mut opt = Adam::new(vec![p.clone()], 0.01, 0.9, 0.999);
        opt.step();
        let d = p.to_vec();
        let expect = [1.0 - 0.01, 1.0 + 0.01, 1.0 - 0.01];
        for (a, e) in d.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameter_unchanged() {
        let p = Tensor::param(&[2], vec![0.5f32, -0.5]);
        p.accumulate_grad(&[0.0, 0.0]);
        let mut opt = Adam::new(vec![p.clone()], 0.1, 0.5, 0.999);
        opt.step();
        assert_eq!(p.to_vec(), vec![0.5, -0.5]);
    }

    #[test]
    fn adam_absent_gradient_is_skipped() {
        let p = Tensor::param(&[2], vec![0.5f32, -0.5]);
        let mut opt = Adam::new(vec![p.clone()], 0.1, 0.5, 0.999);
        opt.step();
        assert_eq!(p.to_vec(), vec![0.5, -0.5]);
    }

    #[test]
    fn adam_degenerate_betas_match_closed_form() {
        // β₁ = β₂ = 0: every update is -lr·g/(|g| + eps), twice over.
        let p = Tensor::param(&[1], vec![0.0f64]);
        let mut opt = Adam::new(vec![p.clone()], 0.05, 0.0, 0.0);
        let g = 0.37;
        for _ in 0..2 {
            p.zero_grad();
            p.accumulate_grad(&[g]);
            opt.step();
        }
        let expect = -2.0 * 0.05 * g / (g + 1e-8);
        assert!((p.item() - expect).abs() < 1e-9, "{} vs {expect}", p.item());
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let p = Tensor::param(&[3], vec![1.0f32, 2.0, 3.0]);
        p.accumulate_grad(&[0.5, -0.5, 2.0]);
        let mut opt = Adam::new(vec![p.clone()], 0.0, 0.5, 0.999);
        opt.step();
        assert_eq!(p.to_vec(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn initialization_is_reproducible_from_seed() {
        let a = Linear::<f32>::new(&mut rng(99), 7, 5);
        let b = Linear::<f32>::new(&mut rng(99), 7, 5);
        assert_eq!(a.weight.to_vec(), b.weight.to_vec());
        assert_eq!(a.bias.to_vec(), b.bias.to_vec());
    }

    #[test]
    fn causal_stack_has_zero_gradient_from_future_inputs() {
        let mut r = rng(13);
        let layer = TransformerLayer::<f64>::new(&mut r, 8, 2, 16);
        let tape = Tape::new();
        let x = Tensor::param(&[1, 4, 8], (0..32).map(|i| (i as f64 * 0.11).cos()).collect());
        let y = layer.forward(&tape, &x, MaskMode::Causal);
        // Loss reads position 1 only; gradient at positions 2..4 must vanish.
        let pos1 = tape.slice(&y, 1, 1, 1);
        let loss = tape.sum(&tape.mul(&pos1, &pos1));
        tape.backward(&loss);
        let g = x.grad().unwrap();
        for t in 2..4 {
            for f in 0..8 {
                assert_eq!(g[t * 8 + f], 0.0, "leak at t={t}, f={f}");
            }
        }
        assert!(g[..16].iter().any(|&v| v != 0.0));
    }
}
