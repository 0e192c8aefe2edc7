//! Compares analytic and finite-difference gradients of a rendered ray
//! batch with respect to a few model parameters.
//!
//! cargo run --release --example gradient_check

use std::sync::Arc;

use compnerf::geometry::Vec3;
use compnerf::hashenc::GridConfig;
use compnerf::model::{pose_bounds, sample_rays, Model, ModelConfig, RenderOptions};
use compnerf::render::{Camera, OUT_RIGID};
use compnerf::skeleton::{Pose, Skeleton};
use diffcore::gradcheck::relative_error;
use diffcore::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> compnerf::Result<()> {
    let sk = Skeleton::humanoid(3)?;
    let mut cfg = ModelConfig::new(vec![sk.clone()]);
    cfg.volume_resolution = [8; 3];
    cfg.local_grid = GridConfig {
        levels: 3,
        half_width: 2,
        log2_table_size: 8,
        base_resolution: 4,
        max_resolution: 16,
    };
    cfg.decoder.hidden = 8;
    cfg.attention.model_width = 8;
    let mut model = Model::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let names: Vec<String> = model.params.names().cloned().collect();
    for name in &names {
        for v in model.params.tensor_mut(name)?.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }

    let pose = Arc::new(Pose::identity(&sk));
    let bounds = pose_bounds(&pose);
    let centre: Vec3 = std::array::from_fn(|a| 0.5 * (bounds.min[a] + bounds.max[a]));
    let cam = Camera::looking_at([centre[0], centre[1], centre[2] + 3.0], centre, [0.0, 1.0, 0.0], 40.0, 16, 16);
    let rays: Vec<_> = (0..8).map(|i| cam.ray(5.0 + i as f64 * 0.7, 8.0)).collect::<compnerf::Result<_>>()?;
    let samples = sample_rays::<ChaCha8Rng>(&bounds, &rays, 16, None);
    let opts = RenderOptions::default();

    // Sum of the rigid red channel over the batch.
    let loss = |params: &compnerf::params::Params| -> compnerf::Result<(f64, Tape, compnerf::params::Bound, diffcore::Var)> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let out = model.render_on_tape(&mut tape, &bound, 0, &pose, &rays, &samples, &opts)?;
        let col = tape.slice_cols(out, OUT_RIGID, OUT_RIGID + 1)?;
        let l = tape.sum(col);
        Ok((tape.value(l).data()[0], tape, bound, l))
    };
    let mut params = model.params.clone();
    let (_, tape, bound, l) = loss(&params)?;
    let grads = tape.backward(l)?;

    let h = 1e-6;
    for name in ["rigid.out.w", "rigid.l1.w", "grid.local.0.entries", "volume.0.logits"] {
        let Some(var) = bound.var(name).ok() else { continue };
        let Some(g) = grads.get(var) else { continue };
        let g = g.to_vec();
        // Entries the batch actually touches.
        let live: Vec<usize> = (0..g.len()).filter(|&j| g[j] != 0.0).collect();
        if live.is_empty() {
            continue;
        }
        let picks: Vec<usize> = (0..6).map(|_| live[rng.random_range(0..live.len())]).collect();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &j in &picks {
            let orig = params.get(name)?.data()[j];
            params.tensor_mut(name)?.data_mut()[j] = orig + h;
            let plus = loss(&params)?.0;
            params.tensor_mut(name)?.data_mut()[j] = orig - h;
            let minus = loss(&params)?.0;
            params.tensor_mut(name)?.data_mut()[j] = orig;
            analytic.push(g[j]);
            numeric.push((plus - minus) / (2.0 * h));
        }
        println!("{name:<22} relative error {:.2e}", relative_error(&analytic, &numeric));
    }
    Ok(())
}
