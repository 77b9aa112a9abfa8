//! Overfits the toy inter-channel model to one synthetic pair and reports
//! the SDR trajectory.

use std::time::Instant;

use ictasnet::model::preset;
use ictasnet::train::{synth_dataset, train_with, TrainConfig};
use ictasnet::Model;

fn main() -> ictasnet::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let cfg = preset("toy-ic").expect("toy preset").config;
    let data = synth_dataset(0, 1, 0.5, cfg.mics, 16000)?;
    println!("input snr {:.2} dB", data[0].snr_db);
    let model = Model::new(cfg)?;
    let tc = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    train_with(&model, &data, &tc, |r| {
        if r.step == 1 || r.step % 50 == 0 {
            println!("step {:>5}  sdr {:>8.3} dB  {:>7.1} s", r.step, r.sdr_db, start.elapsed().as_secs_f64());
        }
    })?;
    Ok(())
}
