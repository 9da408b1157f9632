//! Finite-difference verification of backward rules.
//!
//! The oracle is a central difference of the forward value only, so it is
//! independent of every analytic gradient it checks. Checks run in 64-bit
//! mode with step 1e-5. A probe is one randomly chosen input coordinate.

use crate::model::{
    loss_gan_d, loss_gan_g, loss_moment, loss_supervised, AblationMode, ModelConfig, TstGan,
};
use crate::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub probes: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{:<22} {:>3} probes  max rel err {:>12.3e}  {}",
            self.name,
            self.probes,
            self.max_rel_err,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    let denom = analytic.abs().max(fd.abs()).max(1e-6);
    (analytic - fd).abs() / denom
}

/// Compare analytic gradients of `forward` against central finite
/// differences at `n_probes` random coordinates of `params`.
///
/// `forward` must build the same graph on every call; it is invoked once on
/// a recording tape for the analytic pass and twice per probe on inference
/// tapes for the oracle.
pub fn check_gradient(
    name: &str,
    params: &[Tensor<f64>],
    forward: &dyn Fn(&Tape<f64>) -> Tensor<f64>,
    n_probes: usize,
    seed: u64,
) -> CheckReport {
    check_gradient_scaled(name, params, forward, n_probes, seed, 1.0)
}

/// As [`check_gradient`], with the analytic gradient multiplied by
/// `analytic_scale` before comparison. A scale other than 1.0 is the
/// negative-control fixture: it must make the check fail.
pub fn check_gradient_scaled(
    name: &str,
    params: &[Tensor<f64>],
    forward: &dyn Fn(&Tape<f64>) -> Tensor<f64>,
    n_probes: usize,
    seed: u64,
    analytic_scale: f64,
) -> CheckReport {
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = forward(&tape);
    tape.backward(&loss);
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    drop(tape);

    let total: usize = params.iter().map(|p| p.numel()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for _ in 0..n_probes {
        let mut flat = rng.gen_range(0..total);
        let mut pi = 0;
        while flat >= params[pi].numel() {
            flat -= params[pi].numel();
            pi += 1;
        }
        let orig = params[pi].data()[flat];
        let eval = |v: f64| {
            params[pi].data_mut()[flat] = v;
            let t = Tape::inference();
            forward(&t).item()
        };
        let f_plus = eval(orig + FD_STEP);
        let f_minus = eval(orig - FD_STEP);
        params[pi].data_mut()[flat] = orig;
        let fd = (f_plus - f_minus) / (2.0 * FD_STEP);
        let a = analytic[pi][flat] * analytic_scale;
        max_rel = max_rel.max(rel_err(a, fd));
    }
    CheckReport {
        name: name.to_string(),
        probes: n_probes,
        max_rel_err: max_rel,
        passed: max_rel < FD_TOL,
    }
}

pub fn uniform_data(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn param(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, uniform_data(rng, n, lo, hi))
}

/// Finite-difference check of every tape primitive, one entry each.
/// `corrupt` names a primitive whose analytic gradient is deliberately
/// scaled by 1.01 before comparison (negative-control fixture).
pub fn run_primitive_suite(seed: u64, n_probes: usize, corrupt: Option<&str>) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut reports = Vec::new();
    let mut case = |name: &str,
                    params: Vec<Tensor<f64>>,
                    forward: Box<dyn Fn(&Tape<f64>) -> Tensor<f64>>,
                    rng: &mut ChaCha8Rng| {
        let scale = if corrupt == Some(name) { 1.01 } else { 1.0 };
        reports.push(check_gradient_scaled(
            name,
            &params,
            forward.as_ref(),
            n_probes,
            rng.gen(),
            scale,
        ));
    };

    {
        let a = param(&mut rng, &[2, 3, 4], -2.0, 2.0);
        let b = param(&mut rng, &[4, 5], -2.0, 2.0);
        let (ac, bc) = (a.clone(), b.clone());
        case(
            "matmul",
            vec![a, b],
            Box::new(move |t| {
                let c = t.matmul(&ac, &bc);
                // Square so the gradient depends on both operands nontrivially.
                t.mean(&t.mul(&c, &c))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[3, 4], -2.0, 2.0);
        let b = param(&mut rng, &[4], -2.0, 2.0);
        let (ac, bc) = (a.clone(), b.clone());
        case(
            "add",
            vec![a, b],
            Box::new(move |t| {
                let s = t.add(&ac, &bc);
                t.mean(&t.mul(&s, &s))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[3, 4], -2.0, 2.0);
        let b = param(&mut rng, &[3, 1], -2.0, 2.0);
        let (ac, bc) = (a.clone(), b.clone());
        case(
            "sub",
            vec![a, b],
            Box::new(move |t| {
                let s = t.sub(&ac, &bc);
                t.mean(&t.mul(&s, &s))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[2, 3, 4], -2.0, 2.0);
        let b = param(&mut rng, &[3, 4], -2.0, 2.0);
        let (ac, bc) = (a.clone(), b.clone());
        case(
            "mul",
            vec![a, b],
            Box::new(move |t| t.mean(&t.mul(&ac, &bc))),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[3, 4], -2.0, 2.0);
        let b = param(&mut rng, &[3, 4], 0.5, 2.0);
        let (ac, bc) = (a.clone(), b.clone());
        case(
            "div",
            vec![a, b],
            Box::new(move |t| t.mean(&t.div(&ac, &bc))),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[4, 5], -2.0, 2.0);
        let ac = a.clone();
        case(
            "add_scalar",
            vec![a],
            Box::new(move |t| {
                let s = t.add_scalar(&ac, 1.5);
                t.mean(&t.mul(&s, &s))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[4, 5], -2.0, 2.0);
        let ac = a.clone();
        case(
            "mul_scalar",
            vec![a],
            Box::new(move |t| {
                let s = t.mul_scalar(&ac, -0.7);
                t.mean(&t.mul(&s, &s))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[4, 5], 0.3, 3.0);
        let ac = a.clone();
        case("sqrt", vec![a], Box::new(move |t| t.mean(&t.sqrt(&ac))), &mut rng);
    }
    {
        let a = param(&mut rng, &[4, 5], 0.2, 2.0);
        let ac = a.clone();
        // Mixed signs but bounded away from the kink at zero.
        case(
            "abs",
            vec![a],
            Box::new(move |t| t.mean(&t.abs(&t.sub(&ac, &Tensor::full(&[4, 5], 1.1))))),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[4, 5], -3.0, 3.0);
        let ac = a.clone();
        case(
            "sigmoid",
            vec![a],
            Box::new(move |t| t.mean(&t.sigmoid(&ac))),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[4, 5], -3.0, 3.0);
        let ac = a.clone();
        case("tanh", vec![a], Box::new(move |t| t.mean(&t.tanh(&ac))), &mut rng);
    }
    {
        let a = param(&mut rng, &[4, 5], -3.0, 3.0);
        let ac = a.clone();
        case("gelu", vec![a], Box::new(move |t| t.mean(&t.gelu(&ac))), &mut rng);
    }
    {
        let a = param(&mut rng, &[3, 4], -2.0, 2.0);
        let ac = a.clone();
        case(
            "sum",
            vec![a],
            Box::new(move |t| {
                let sq = t.mul(&ac, &ac);
                t.sum(&sq)
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[3, 4], -2.0, 2.0);
        let ac = a.clone();
        case(
            "mean",
            vec![a],
            Box::new(move |t| {
                let sq = t.mul(&ac, &ac);
                t.mean(&sq)
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[2, 3, 4], -2.0, 2.0);
        let ac = a.clone();
        case(
            "sum_axis",
            vec![a],
            Box::new(move |t| {
                let s = t.sum_axis(&ac, 1, false);
                t.mean(&t.mul(&s, &s))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[2, 3, 4], -2.0, 2.0);
        let ac = a.clone();
        case(
            "mean_axis",
            vec![a],
            Box::new(move |t| {
                let s = t.mean_axis(&ac, 2, true);
                t.mean(&t.mul(&s, &s))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[2, 6], -2.0, 2.0);
        let ac = a.clone();
        case(
            "reshape",
            vec![a],
            Box::new(move |t| {
                let r = t.reshape(&ac, &[3, 4]);
                t.mean(&t.mul(&r, &r))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[2, 3, 4], -2.0, 2.0);
        let ac = a.clone();
        case(
            "transpose",
            vec![a],
            Box::new(move |t| {
                let tr = t.transpose(&ac, 0, 2);
                t.mean(&t.mul(&tr, &tr))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[2, 3, 4], -2.0, 2.0);
        let b = param(&mut rng, &[2, 2, 4], -2.0, 2.0);
        let (ac, bc) = (a.clone(), b.clone());
        case(
            "concat",
            vec![a, b],
            Box::new(move |t| {
                let c = t.concat(&[&ac, &bc], 1);
                t.mean(&t.mul(&c, &c))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[2, 5, 3], -2.0, 2.0);
        let ac = a.clone();
        case(
            "slice",
            vec![a],
            Box::new(move |t| {
                let s = t.slice(&ac, 1, 1, 3);
                t.mean(&t.mul(&s, &s))
            }),
            &mut rng,
        );
    }
    {
        let a = param(&mut rng, &[3, 5], -2.0, 2.0);
        let w = param(&mut rng, &[5], -1.0, 1.0);
        let (ac, wc) = (a.clone(), w.clone());
        case(
            "softmax",
            vec![a, w],
            Box::new(move |t| {
                let s = t.softmax(&ac, 1);
                t.mean(&t.mul(&s, &wc))
            }),
            &mut rng,
        );
    }
    {
        let x = param(&mut rng, &[3, 6], -2.0, 2.0);
        let g = param(&mut rng, &[6], 0.5, 1.5);
        let b = param(&mut rng, &[6], -0.5, 0.5);
        let (xc, gc, bc) = (x.clone(), g.clone(), b.clone());
        case(
            "layer_norm",
            vec![x, g, b],
            Box::new(move |t| {
                let y = t.layer_norm(&xc, &gc, &bc, 1e-5);
                t.mean(&t.mul(&y, &y))
            }),
            &mut rng,
        );
    }

    reports
}

/// Finite-difference check of every composed model path and every training
/// loss, on a small 64-bit model. Probes cover both the model parameters
/// and the data leaves of each path.
pub fn run_composite_suite(seed: u64, n_probes: usize) -> Vec<CheckReport> {
    let cfg = ModelConfig {
        features: 3,
        noise_dim: 3,
        model_dim: 8,
        heads: 2,
        ff_hidden: 16,
        layers: 2,
        seq_len: 6,
    };
    let (b, t, m) = (2usize, cfg.seq_len, cfg.features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ed_270b_91a3_c64d);
    let mut model_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let model = std::rc::Rc::new(
        TstGan::<f64>::new(&mut model_rng, cfg.clone(), AblationMode::Full)
            .expect("tiny config is valid"),
    );
    let mut reports = Vec::new();

    let data_leaf = |rng: &mut ChaCha8Rng| {
        Tensor::param(&[b, t, m], uniform_data(rng, b * t * m, 0.05, 0.95))
    };
    let noise_leaf = |rng: &mut ChaCha8Rng| {
        Tensor::param(&[b, t, m], uniform_data(rng, b * t * m, -1.5, 1.5))
    };
    let with_params = |extra: Vec<Tensor<f64>>, groups: &[Vec<Tensor<f64>>]| -> Vec<Tensor<f64>> {
        let mut all = extra;
        for g in groups {
            all.extend(g.iter().cloned());
        }
        all
    };

    {
        let x = data_leaf(&mut rng);
        let mc = Rc::clone(&model);
        let xc = x.clone();
        let params = with_params(
            vec![x],
            &[model.embedder_params(), model.predictor_params()],
        );
        reports.push(check_gradient(
            "embedder_path+loss_s",
            &params,
            &move |tape| {
                let (_, x_hat) = mc.embed_and_predict(tape, &xc).unwrap();
                loss_supervised(tape, &xc, &x_hat)
            },
            n_probes,
            rng.gen(),
        ));
    }
    {
        let z = noise_leaf(&mut rng);
        let mc = Rc::clone(&model);
        let zc = z.clone();
        let params = with_params(
            vec![z],
            &[model.generator_params(), model.predictor_params()],
        );
        reports.push(check_gradient(
            "generator_path",
            &params,
            &move |tape| {
                let fake = mc.generate(tape, &zc).unwrap();
                tape.mean(&tape.mul(&fake, &fake))
            },
            n_probes,
            rng.gen(),
        ));
    }
    {
        let x = data_leaf(&mut rng);
        let fake = noise_leaf(&mut rng);
        let mc = Rc::clone(&model);
        let (xc, fc) = (x.clone(), fake.clone());
        let params = with_params(vec![x, fake], &[model.discriminator_params()]);
        reports.push(check_gradient(
            "discriminator_path+loss_gan_d",
            &params,
            &move |tape| {
                let sr = mc.discriminate(tape, &xc).unwrap();
                let sf = mc.discriminate(tape, &fc).unwrap();
                loss_gan_d(tape, &sr, &sf)
            },
            n_probes,
            rng.gen(),
        ));
    }
    {
        let z = noise_leaf(&mut rng);
        let mc = Rc::clone(&model);
        let zc = z.clone();
        let params = with_params(
            vec![z],
            &[
                model.generator_params(),
                model.predictor_params(),
                model.discriminator_params(),
            ],
        );
        reports.push(check_gradient(
            "adversarial_path+loss_gan_g",
            &params,
            &move |tape| {
                let fake = mc.generate(tape, &zc).unwrap();
                let sf = mc.discriminate(tape, &fake).unwrap();
                loss_gan_g(tape, &sf)
            },
            n_probes,
            rng.gen(),
        ));
    }
    {
        let x = data_leaf(&mut rng);
        let mask: Vec<bool> = (0..b * t).map(|i| i % 3 != 1).collect();
        let mc = Rc::clone(&model);
        let xc = x.clone();
        let params = with_params(vec![x], &[model.generator_params()]);
        reports.push(check_gradient(
            "masked_modelling_path+loss_mm",
            &params,
            &move |tape| {
                let (_, loss) = mc.masked_modelling(tape, &xc, &mask).unwrap();
                loss
            },
            n_probes,
            rng.gen(),
        ));
    }
    {
        let x = data_leaf(&mut rng);
        let z = noise_leaf(&mut rng);
        let mc = Rc::clone(&model);
        let (xc, zc) = (x.clone(), z.clone());
        let params = with_params(
            vec![x, z],
            &[model.generator_params(), model.predictor_params()],
        );
        reports.push(check_gradient(
            "moment_path+loss_ml",
            &params,
            &move |tape| {
                let fake = mc.generate(tape, &zc).unwrap();
                loss_moment(tape, &xc, &fake)
            },
            n_probes,
            rng.gen(),
        ));
    }

    reports
}


