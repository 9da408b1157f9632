use std::time::Instant;
use tstgan::data::generate_sines;
use tstgan::model::AblationMode;
use tstgan::train::{TrainConfig, Trainer};

fn main() {
    let data = generate_sines(2000, 24, 5, 0.8, 0).unwrap();
    let mut cfg = TrainConfig::with_features(5);
    cfg.ablation = AblationMode::Full;
    cfg.seed = 1;
    let mut tr = Trainer::new(cfg).unwrap();
    for (name, f) in [
        ("stage1", (|tr: &mut Trainer, d: &_| { tr.stage1_step(d, 1).unwrap(); }) as fn(&mut Trainer, &tstgan::data::WindowedDataset)),
        ("stage2", |tr, d| { tr.stage2_step(d, 1).unwrap(); }),
        ("joint_d", |tr, d| { tr.joint_substep_d(d, 1).unwrap(); }),
        ("joint_g", |tr, d| { tr.joint_substep_g(d, 1).unwrap(); }),
        ("joint_aux", |tr, d| { tr.joint_substep_aux(d, 1).unwrap(); }),
        ("joint_sup", |tr, d| { tr.joint_substep_sup(d, 1).unwrap(); }),
    ] {
        f(&mut tr, &data); // warm
        let t0 = Instant::now();
        let reps = 5;
        for _ in 0..reps {
            f(&mut tr, &data);
        }
        println!("{name:<10} {:>8.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    }
}
