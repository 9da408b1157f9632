use std::time::Instant;
use tstgan::tensor::{Tape, Tensor};

fn timeit(name: &str, reps: usize, mut f: impl FnMut()) {
    f();
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{name:<28} {:>9.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}

fn main() {
    let x = Tensor::<f32>::param(&[128, 24, 32], vec![0.1; 128 * 24 * 32]);
    let w = Tensor::<f32>::param(&[32, 32], vec![0.01; 32 * 32]);
    let wff = Tensor::<f32>::param(&[32, 128], vec![0.01; 32 * 128]);
    let q = Tensor::<f32>::param(&[128, 8, 24, 4], vec![0.1; 128 * 8 * 24 * 4]);
    let kt = Tensor::<f32>::param(&[128, 8, 4, 24], vec![0.1; 128 * 8 * 24 * 4]);

    timeit("proj fwd (infer)", 100, || {
        let t = Tape::inference();
        let _ = t.matmul(&x, &w);
    });
    timeit("proj fwd+bwd", 100, || {
        let t = Tape::new();
        let c = t.matmul(&x, &w);
        let l = t.sum(&c);
        t.backward(&l);
        x.zero_grad();
        w.zero_grad();
    });
    timeit("ff fwd+bwd", 100, || {
        let t = Tape::new();
        let c = t.matmul(&x, &wff);
        let l = t.sum(&c);
        t.backward(&l);
        x.zero_grad();
        wff.zero_grad();
    });
    timeit("attn scores fwd+bwd", 50, || {
        let t = Tape::new();
        let c = t.matmul(&q, &kt);
        let l = t.sum(&c);
        t.backward(&l);
        q.zero_grad();
        kt.zero_grad();
    });
    timeit("softmax scores fwd+bwd", 50, || {
        let s = Tensor::<f32>::param(&[128, 8, 24, 24], vec![0.1; 128 * 8 * 24 * 24]);
        let t = Tape::new();
        let c = t.softmax(&s, 3);
        let l = t.sum(&c);
        t.backward(&l);
    });
    timeit("gelu ff fwd+bwd", 50, || {
        let h = Tensor::<f32>::param(&[128, 24, 128], vec![0.1; 128 * 24 * 128]);
        let t = Tape::new();
        let c = t.gelu(&h);
        let l = t.sum(&c);
        t.backward(&l);
    });
    timeit("transpose12 fwd", 200, || {
        let t = Tape::inference();
        let r = t.reshape(&x, &[128, 24, 8, 4]);
        let _ = t.transpose(&r, 1, 2);
    });
    timeit("layer_norm fwd+bwd", 50, || {
        let g = Tensor::<f32>::param(&[32], vec![1.0; 32]);
        let b = Tensor::<f32>::param(&[32], vec![0.0; 32]);
        let t = Tape::new();
        let c = t.layer_norm(&x, &g, &b, 1e-5);
        let l = t.sum(&c);
        t.backward(&l);
        x.zero_grad();
    });
    timeit("add residual fwd+bwd", 100, || {
        let y = Tensor::<f32>::param(&[128, 24, 32], vec![0.2; 128 * 24 * 32]);
        let t = Tape::new();
        let c = t.add(&x, &y);
        let l = t.sum(&c);
        t.backward(&l);
        x.zero_grad();
    });
}
