//! Renders a synthetic articulated scene to disk and reports mask coverage.
//!
//! cargo run --release --example generate_scene -- /tmp/scene 20

use std::path::PathBuf;
use std::time::Instant;

use compnerf::dataset::Split;
use compnerf::synthdata::{generate_dataset, SceneConfig};

fn main() -> compnerf::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "scene".into()));
    let frames = args.next().map_or(20, |s| s.parse().expect("frame count"));
    let cfg = SceneConfig {
        frames,
        ..SceneConfig::default()
    };
    let start = Instant::now();
    let ds = generate_dataset(&cfg)?;
    ds.save(&out)?;
    let train = ds.split(Split::Train, None);
    let eval = ds.split(Split::Eval, None);
    let coverage: f64 = ds.masks.iter().map(|m| m.count() as f64 / m.data.len() as f64).sum::<f64>() / ds.masks.len() as f64;
    println!(
        "{} train views, {} eval views, mean mask coverage {:.1}%, {:.1}s -> {}",
        train.len(),
        eval.len(),
        100.0 * coverage,
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}
