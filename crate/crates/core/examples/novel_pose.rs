//! Renders a trained subject in a pose that never appears in the data.
//!
//! cargo run --release --example novel_pose -- CHECKPOINT OUT.ppm [ANGLE]

use std::path::PathBuf;

use compnerf::checkpoint::Checkpoint;
use compnerf::cli::default_camera;
use compnerf::geometry::Mat3;
use compnerf::image::{write_ppm, Image};
use compnerf::render::CompositeConfig;
use compnerf::skeleton::forward_kinematics;

fn main() -> compnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = PathBuf::from(args.next().expect("usage: CHECKPOINT OUT.ppm [ANGLE]"));
    let out = PathBuf::from(args.next().expect("usage: CHECKPOINT OUT.ppm [ANGLE]"));
    let angle: f64 = args.next().map_or(0.6, |s| s.parse().expect("angle in radians"));
    let model = Checkpoint::load(&ckpt)?.into_model()?;
    let sk = &model.config.skeletons[0];

    // Alternate bends about z, then x, growing down the chain.
    let rots: Vec<Mat3> = (0..sk.bone_count())
        .map(|k| {
            let axis = if k % 2 == 0 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
            Mat3::from_axis_angle(axis, angle * (k + 1) as f64 / sk.bone_count() as f64)
        })
        .collect();
    let pose = forward_kinematics(sk, &rots, [0.0; 3])?;
    let camera = default_camera(&pose);
    let opts = model.render_options(CompositeConfig::default());
    let r = model.render_image(0, &pose, &camera, 64, &opts, 512)?;
    let coverage = r.alpha_final.iter().filter(|&&a| a > 0.5).count();
    write_ppm(&out, &Image::from_data(r.width, r.height, r.final_rgb)?)?;
    println!("{}×{} render, {coverage} opaque pixels -> {}", r.width, r.height, out.display());
    Ok(())
}
