use std::time::Instant;
use tstgan::tensor::{Tape, Tensor};

fn main() {
    let (m, k, n) = (3072usize, 32usize, 32usize);
    let a = vec![0.5f32; m * k];
    let b = vec![0.25f32; k * n];
    let reps = 200;

    for (name, xg, wg) in [("only x grad", true, false), ("only w grad", false, true), ("both", true, true)] {
        let x = if xg { Tensor::<f32>::param(&[m, k], a.clone()) } else { Tensor::new(&[m, k], a.clone()) };
        let w = if wg { Tensor::<f32>::param(&[k, n], b.clone()) } else { Tensor::new(&[k, n], b.clone()) };
        let t0 = Instant::now();
        for _ in 0..reps {
            let t = Tape::new();
            let c = t.matmul(&x, &w);
            let l = t.sum(&c);
            t.backward(&l);
            x.zero_grad();
            w.zero_grad();
        }
        println!("{name:<14} {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    }
}
