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
    let t0 = Instant::now();
    for i in 0..30 {
        tr.stage1_step(&data, i).unwrap();
    }
    println!("stage1 x30: {:.1} ms/step", t0.elapsed().as_secs_f64() * 1000.0 / 30.0);
}
