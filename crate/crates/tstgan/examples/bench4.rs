use std::time::Instant;
use tstgan::tensor::{Tape, Tensor};

fn main() {
    // Raw f32 gemm reference: [3072,32]x[32,32]
    let (m, k, n) = (3072usize, 32usize, 32usize);
    let a = vec![0.5f32; m * k];
    let b = vec![0.25f32; k * n];
    let mut c = vec![0.0f32; m * n];
    let t0 = Instant::now();
    let reps = 200;
    for _ in 0..reps {
        c.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &b[p * n..(p + 1) * n];
                for (cj, &bj) in crow.iter_mut().zip(brow) {
                    *cj += aip * bj;
                }
            }
        }
    }
    let el = t0.elapsed().as_secs_f64() / reps as f64;
    println!("raw ikj gemm: {:.3} ms  ({:.1} GFLOP/s)", el * 1000.0, 2.0 * (m * k * n) as f64 / el / 1e9);

    // Through the tape, forward only, inference
    let xt = Tensor::<f32>::new(&[m, k], a.clone());
    let wt = Tensor::<f32>::new(&[k, n], b.clone());
    let t0 = Instant::now();
    for _ in 0..reps {
        let t = Tape::inference();
        let _ = t.matmul(&xt, &wt);
    }
    let el = t0.elapsed().as_secs_f64() / reps as f64;
    println!("tape matmul fwd: {:.3} ms", el * 1000.0);

    // Recording + backward, decomposed
    let xp = Tensor::<f32>::param(&[m, k], a.clone());
    let wp = Tensor::<f32>::param(&[k, n], b.clone());
    let t0 = Instant::now();
    for _ in 0..reps {
        let t = Tape::new();
        let _c = t.matmul(&xp, &wp);
    }
    let el_f = t0.elapsed().as_secs_f64() / reps as f64;
    println!("tape matmul fwd (recording): {:.3} ms", el_f * 1000.0);

    let t0 = Instant::now();
    for _ in 0..reps {
        let t = Tape::new();
        let c = t.matmul(&xp, &wp);
        let l = t.sum(&c);
        t.backward(&l);
        xp.zero_grad();
        wp.zero_grad();
    }
    let el = t0.elapsed().as_secs_f64() / reps as f64;
    println!("tape matmul fwd+sum+bwd: {:.3} ms", el * 1000.0);
}
