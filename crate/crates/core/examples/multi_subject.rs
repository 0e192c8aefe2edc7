//! Trains two subjects jointly, reports per-subject held-out PSNR, and
//! renders subject 0 with subject 1's identity code.
//!
//! cargo run --release --example multi_subject -- DATA_DIR OUT_DIR [STEPS]
//!
//! DATA_DIR needs at least two subjects (`compnerf gen --subjects 2`).

use std::path::PathBuf;

use compnerf::dataset::{SceneDataset, Split};
use compnerf::image::{write_ppm, Image};
use compnerf::model::{Model, RenderOptions};
use compnerf::presets::{desk_model, desk_train};
use compnerf::render::CompositeConfig;
use compnerf::train::{TrainConfig, Trainer};

fn main() -> compnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().expect("usage: DATA_DIR OUT_DIR [STEPS]"));
    let out = PathBuf::from(args.next().expect("usage: DATA_DIR OUT_DIR [STEPS]"));
    let steps = args.next().map_or(1000, |s| s.parse().expect("step count"));
    let ds = SceneDataset::load(&data)?;
    let model = Model::new(desk_model().into_config(&ds, &[0, 1]))?;
    let cfg = TrainConfig {
        max_steps: steps,
        eval_every: 0,
        eval_views: Some(8),
        ..desk_train()
    };
    let mut trainer = Trainer::new(model, &ds, cfg)?;
    trainer.run(Some(&out))?;

    let scores = trainer.evaluate_views()?;
    for s in 0..2 {
        let own: Vec<f64> = scores.iter().filter(|v| ds.meta.views[v.view].subject == s).map(|v| v.psnr).collect();
        if !own.is_empty() {
            println!("subject {s}: {:.3} dB over {} views", own.iter().sum::<f64>() / own.len() as f64, own.len());
        }
    }

    let view = ds.split(Split::Eval, Some(&[0]))[0];
    let opts = trainer.model.render_options(CompositeConfig {
        background: ds.meta.background,
        ..CompositeConfig::default()
    });
    let swapped = RenderOptions {
        code_override: Some(1),
        ..opts.clone()
    };
    let m = &trainer.model;
    let own = m.render_image(0, ds.pose(view), ds.camera(view), 64, &opts, 512)?;
    let other = m.render_image(0, ds.pose(view), ds.camera(view), 64, &swapped, 512)?;
    let own = Image::from_data(own.width, own.height, own.final_rgb)?;
    let other = Image::from_data(other.width, other.height, other.final_rgb)?;
    write_ppm(&out.join("subject0_own_code.ppm"), &own)?;
    write_ppm(&out.join("subject0_code1.ppm"), &other)?;
    println!("code swap L1 difference {:.4}", own.mean_abs_diff(&other));
    Ok(())
}
