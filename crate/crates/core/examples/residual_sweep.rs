//! Renders one dataset view of a trained checkpoint at several residual
//! scales and reports the L1 distance of each to the full render.
//!
//! cargo run --release --example residual_sweep -- CHECKPOINT DATA_DIR OUT_DIR [VIEW]

use std::path::PathBuf;

use compnerf::checkpoint::Checkpoint;
use compnerf::dataset::{SceneDataset, Split};
use compnerf::image::{write_ppm, Image};
use compnerf::render::CompositeConfig;

const SCALES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn main() -> compnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let usage = "usage: CHECKPOINT DATA_DIR OUT_DIR [VIEW]";
    let ckpt = PathBuf::from(args.next().expect(usage));
    let data = PathBuf::from(args.next().expect(usage));
    let out = PathBuf::from(args.next().expect(usage));
    let model = Checkpoint::load(&ckpt)?.into_model()?;
    let ds = SceneDataset::load(&data)?;
    let subject = model.config.dataset_subjects()[0];
    let view = match args.next() {
        Some(v) => v.parse().expect("view index"),
        None => ds.split(Split::Eval, Some(&[subject]))[0],
    };
    std::fs::create_dir_all(&out).map_err(|e| compnerf::Error::io(&out, e))?;

    let mut images = Vec::new();
    for scale in SCALES {
        let opts = model.render_options(CompositeConfig {
            background: ds.meta.background,
            residual_scale: scale,
            ..CompositeConfig::default()
        });
        let r = model.render_image(0, ds.pose(view), ds.camera(view), 64, &opts, 512)?;
        let img = Image::from_data(r.width, r.height, r.final_rgb)?;
        write_ppm(&out.join(format!("scale_{scale:.2}.ppm")), &img)?;
        images.push(img);
    }
    let full = images.last().expect("at least one scale");
    for (scale, img) in SCALES.iter().zip(&images) {
        println!("δ = {scale:.2}  L1 to δ = 1: {:.5}", img.mean_abs_diff(full));
    }
    Ok(())
}
