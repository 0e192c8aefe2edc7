//! Trains the full model on one subject with the desk preset and reports
//! held-out PSNR.
//!
//! cargo run --release --example train_single_subject -- DATA_DIR OUT_DIR [STEPS]

use std::path::PathBuf;
use std::time::Instant;

use compnerf::dataset::SceneDataset;
use compnerf::model::Model;
use compnerf::presets::{desk_model, desk_train};
use compnerf::train::{TrainConfig, Trainer};

fn main() -> compnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().expect("usage: DATA_DIR OUT_DIR [STEPS]"));
    let out = PathBuf::from(args.next().expect("usage: DATA_DIR OUT_DIR [STEPS]"));
    let steps = args.next().map_or(1000, |s| s.parse().expect("step count"));
    let ds = SceneDataset::load(&data)?;
    let model = Model::new(desk_model().into_config(&ds, &[0]))?;
    let cfg = TrainConfig {
        max_steps: steps,
        eval_every: (steps / 4).max(1),
        ..desk_train()
    };
    let mut trainer = Trainer::new(model, &ds, cfg)?;
    let start = Instant::now();
    let report = trainer.run(Some(&out))?;
    for (step, e) in &report.evals {
        println!("step {step:>6}  PSNR {:7.3} dB  SSIM {:.4}", e.psnr, e.ssim);
    }
    let first = report.losses.first().map_or(0.0, |l| l.total);
    let last = report.losses.last().map_or(0.0, |l| l.total);
    println!(
        "{} steps in {:.1}s; loss {first:.4} -> {last:.4}; outputs in {}",
        report.steps,
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}
