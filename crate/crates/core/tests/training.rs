mod common;

use common::{tiny_config, tiny_dataset, tiny_model, tiny_train};
use compnerf::image::Image;
use compnerf::metrics::{ssim, PerceptualProxy};
use compnerf::model::{lr_group, local_grid_param, LrGroup, Model, GLOBAL_GRID_PARAM};
use compnerf::train::{loss_on_tape, Frame, LossSpec, TrainConfig, Trainer};
use diffcore::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn perturb_residual(m: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in m.params.tensor_mut("nonrigid.out.w").unwrap().data_mut() {
        *v = rng.random_range(-0.3..0.3);
    }
    m.params.tensor_mut("rigid.out.b").unwrap().data_mut()[3] = 1.0;
}

fn loss_at(m: &Model, ds: &compnerf::dataset::SceneDataset, view: usize, cfg: &TrainConfig, corners: &[(usize, usize)]) -> compnerf::train::LossBreakdown {
    let spec = LossSpec::new(m, cfg, ds.meta.background);
    let frame = Frame {
        subject: 0,
        pose: ds.pose(view),
        camera: ds.camera(view),
        image: &ds.images[view],
    };
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape, false);
    loss_on_tape(&mut tape, &bound, m, &frame, corners, &spec, None).unwrap().1
}

pub fn loss_equals_the_sum_of_independently_computed_terms() {
    let ds = tiny_dataset(1, 2, 3);
    let mut m = tiny_model(&ds, &[0]);
    perturb_residual(&mut m, 1);
    let cfg = TrainConfig {
        patch_size: 4,
        samples_per_ray: 4,
        lambda: 0.3,
        ..tiny_train()
    };
    let view = 0;
    let corners = [(12, 10), (15, 17), (9, 14)];
    let got = loss_at(&m, &ds, view, &cfg, &corners);

    let spec = LossSpec::new(&m, &cfg, ds.meta.background);
    let img = m.render_image(0, ds.pose(view), ds.camera(view), 4, &spec.options, 64).unwrap();
    let fin = Image::from_data(img.width, img.height, img.final_rgb).unwrap();
    let rig = Image::from_data(img.width, img.height, img.rigid_rgb).unwrap();
    let gt = &ds.images[view];
    let proxy = PerceptualProxy::default();
    let mse = |a: &Image, b: &Image| a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    let (mut lr, mut lf) = (0.0, 0.0);
    for &(x, y) in &corners {
        let (f, r, g) = (fin.crop(x, y, 4, 4), rig.crop(x, y, 4, 4), gt.crop(x, y, 4, 4));
        lr += proxy.distance(&r, &g).unwrap() + mse(&r, &g);
        lf += proxy.distance(&f, &g).unwrap() + mse(&f, &g) + (1.0 - ssim(&f, &g).unwrap()) / 2.0;
    }
    let k = corners.len() as f64;
    let (lr, lf) = (lr / k, lf / k);
    assert!((got.rigid.total - lr).abs() < 1e-12, "{} vs {lr}", got.rigid.total);
    assert!((got.final_.total - lf).abs() < 1e-12, "{} vs {lf}", got.final_.total);
    assert!((got.total - (0.3 * lr + 0.7 * lf)).abs() < 1e-12);
    assert!(lf != lr);
}

pub fn combined_loss_is_affine_in_lambda() {
    let ds = tiny_dataset(1, 2, 4);
    let mut m = tiny_model(&ds, &[0]);
    perturb_residual(&mut m, 2);
    let corners = [(10, 12), (14, 8)];
    let at = |lambda: f64| {
        let cfg = TrainConfig { lambda, ..tiny_train() };
        loss_at(&m, &ds, 0, &cfg, &corners)
    };
    let (l0, lh, l1) = (at(0.0), at(0.5), at(1.0));
    assert!((lh.total - (l0.total + l1.total) / 2.0).abs() < 1e-12);
    assert_eq!(l1.total, l1.rigid.total);
    assert_eq!(l0.total, l0.final_.total);
    assert!((lh.total_at(0.5) - lh.total).abs() < 1e-15);
    assert!((l0.total_at(1.0) - l1.total).abs() < 1e-12);
}

pub fn disabled_residual_scores_the_rigid_render_in_both_branches() {
    let ds = tiny_dataset(1, 2, 5);
    let mut cfg = tiny_config(&ds, &[0]);
    cfg.ablation.disable_residual = true;
    let m = Model::new(cfg).unwrap();
    assert!(!m.params.names().any(|n| n.starts_with("nonrigid")));
    let l = loss_at(&m, &ds, 0, &tiny_train(), &[(10, 10), (12, 16)]);
    assert_eq!(l.final_.mse, l.rigid.mse);
    assert_eq!(l.final_.perceptual, l.rigid.perceptual);
}

fn entries(m: &Model, name: &str) -> Vec<f64> {
    m.params.get(name).unwrap().data().to_vec()
}

/// Changed entries split by column half.
fn changed_halves(before: &[f64], after: &[f64], width: usize) -> (usize, usize) {
    let mut first = 0;
    let mut second = 0;
    for (i, (a, b)) in before.iter().zip(after).enumerate() {
        if a != b {
            if i % width < width / 2 {
                first += 1;
            } else {
                second += 1;
            }
        }
    }
    (first, second)
}

pub fn residual_only_step_leaves_first_half_entries_untouched() {
    let ds = tiny_dataset(2, 2, 6);
    // Live residual branch: nonzero output weights and a rigid density
    // well above zero, so the clamp on σ + Δσ stays open.
    let mut m = tiny_model(&ds, &[0, 1]);
    perturb_residual(&mut m, 3);
    assert!(m.grids.global.is_some());
    let before: Vec<Vec<f64>> = (0..2).map(|g| entries(&m, &local_grid_param(g))).collect();
    let before_global = entries(&m, GLOBAL_GRID_PARAM);
    let cfg = TrainConfig {
        lambda: 0.0,
        detach_rigid: true,
        seed: 1,
        ..tiny_train()
    };
    let mut t = Trainer::new(m, &ds, cfg).unwrap();
    t.train_step().unwrap();
    let mut second = 0;
    for (g, b) in before.iter().enumerate() {
        let (f, s) = changed_halves(b, &entries(&t.model, &local_grid_param(g)), 4);
        assert_eq!(f, 0);
        second += s;
    }
    assert!(second > 0);
    assert_eq!(entries(&t.model, GLOBAL_GRID_PARAM), before_global);
}

pub fn rigid_only_step_leaves_second_half_entries_untouched() {
    let ds = tiny_dataset(2, 2, 6);
    let mut m = tiny_model(&ds, &[0, 1]);
    perturb_residual(&mut m, 4);
    let before: Vec<Vec<f64>> = (0..2).map(|g| entries(&m, &local_grid_param(g))).collect();
    let before_global = entries(&m, GLOBAL_GRID_PARAM);
    let cfg = TrainConfig {
        lambda: 1.0,
        seed: 2,
        ..tiny_train()
    };
    let mut t = Trainer::new(m, &ds, cfg).unwrap();
    t.train_step().unwrap();
    let mut first = 0;
    for (g, b) in before.iter().enumerate() {
        let (f, s) = changed_halves(b, &entries(&t.model, &local_grid_param(g)), 4);
        assert_eq!(s, 0);
        first += f;
    }
    assert!(first > 0);
    assert_ne!(entries(&t.model, GLOBAL_GRID_PARAM), before_global);
}

pub fn only_skinning_volumes_get_the_small_learning_rate() {
    let ds = tiny_dataset(2, 1, 7);
    let m = tiny_model(&ds, &[0, 1]);
    let cfg = TrainConfig::default();
    let mut slow = 0;
    for name in m.params.names() {
        let lr = cfg.learning_rate(name);
        if name.starts_with("volume.") {
            assert_eq!(lr, 5e-5, "{name}");
            assert_eq!(lr_group(name), LrGroup::WeightVolume);
            slow += 1;
        } else {
            assert_eq!(lr, 5e-3, "{name}");
        }
    }
    assert_eq!(slow, 2);
}

pub fn identical_seeds_replay_identically() {
    let ds = tiny_dataset(1, 3, 8);
    let run = || {
        let mut t = Trainer::new(tiny_model(&ds, &[0]), &ds, TrainConfig { max_steps: 4, ..tiny_train() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let r = t.run(Some(dir.path())).unwrap();
        let csv = std::fs::read(r.metrics_path.unwrap()).unwrap();
        let ckpt = std::fs::read(r.checkpoint_path.unwrap()).unwrap();
        (r.losses, csv, ckpt)
    };
    let a = run();
    let b = run();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(String::from_utf8(a.1).unwrap().lines().count(), 5);
}

pub fn zero_steps_checkpoint_the_initial_model() {
    let ds = tiny_dataset(1, 2, 9);
    let m = tiny_model(&ds, &[0]);
    let init = m.params.clone();
    let mut t = Trainer::new(m, &ds, TrainConfig { max_steps: 0, ..tiny_train() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let r = t.run(Some(dir.path())).unwrap();
    assert_eq!(r.steps, 0);
    let back = compnerf::checkpoint::Checkpoint::load(&r.checkpoint_path.unwrap()).unwrap().into_model().unwrap();
    for (name, v) in init.iter() {
        assert_eq!(back.params.get(name).unwrap().data(), v.data(), "{name}");
    }
}

pub fn a_few_steps_reduce_the_loss_on_a_fixed_frame() {
    let ds = tiny_dataset(1, 1, 10);
    let m = tiny_model(&ds, &[0]);
    let cfg = TrainConfig {
        lambda: 1.0,
        ..tiny_train()
    };
    let corners = [(8, 8), (14, 14)];
    let first = loss_at(&m, &ds, 0, &cfg, &corners).total;
    let mut t = Trainer::new(m, &ds, TrainConfig { max_steps: 30, ..cfg.clone() }).unwrap();
    t.run(None).unwrap();
    let last = loss_at(&t.model, &ds, 0, &cfg, &corners).total;
    assert!(last < first, "{first} -> {last}");
}

mod tests {
    #[test]
    fn loss_equals_the_sum_of_independently_computed_terms() {
        super::loss_equals_the_sum_of_independently_computed_terms()
    }

    #[test]
    fn combined_loss_is_affine_in_lambda() {
        super::combined_loss_is_affine_in_lambda()
    }

    #[test]
    fn disabled_residual_scores_the_rigid_render_in_both_branches() {
        super::disabled_residual_scores_the_rigid_render_in_both_branches()
    }

    #[test]
    fn residual_only_step_leaves_first_half_entries_untouched() {
        super::residual_only_step_leaves_first_half_entries_untouched()
    }

    #[test]
    fn rigid_only_step_leaves_second_half_entries_untouched() {
        super::rigid_only_step_leaves_second_half_entries_untouched()
    }

    #[test]
    fn only_skinning_volumes_get_the_small_learning_rate() {
        super::only_skinning_volumes_get_the_small_learning_rate()
    }

    #[test]
    fn identical_seeds_replay_identically() {
        super::identical_seeds_replay_identically()
    }

    #[test]
    fn zero_steps_checkpoint_the_initial_model() {
        super::zero_steps_checkpoint_the_initial_model()
    }

    #[test]
    fn a_few_steps_reduce_the_loss_on_a_fixed_frame() {
        super::a_few_steps_reduce_the_loss_on_a_fixed_frame()
    }
}
