//! Tiny scenes and model settings shared by the integration tests.
#![allow(dead_code)]

use compnerf::cli::ModelOptions;
use compnerf::dataset::SceneDataset;
use compnerf::hashenc::GridConfig;
use compnerf::model::{Model, ModelConfig};
use compnerf::synthdata::{generate_dataset, SceneConfig};
use compnerf::train::TrainConfig;

pub fn tiny_scene(subjects: usize, frames: usize, seed: u64) -> SceneConfig {
    let d = SceneConfig::default();
    SceneConfig {
        subjects,
        frames,
        width: 32,
        height: 32,
        focal: d.focal * 32.0 / d.width as f64,
        eval_views: 2,
        eval_stride: 2,
        gt_samples: 96,
        seed,
        ..d
    }
}

pub fn tiny_dataset(subjects: usize, frames: usize, seed: u64) -> SceneDataset {
    generate_dataset(&tiny_scene(subjects, frames, seed)).unwrap()
}

pub fn tiny_options() -> ModelOptions {
    let grid = GridConfig {
        levels: 4,
        half_width: 2,
        log2_table_size: 10,
        base_resolution: 4,
        max_resolution: 32,
    };
    let mut o = ModelOptions {
        volume_resolution: [8; 3],
        local_grid: grid,
        global_grid: grid,
        fg_cutoff: 1e-3,
        ..ModelOptions::default()
    };
    o.decoder.hidden = 16;
    o.attention.model_width = 8;
    o
}

pub fn tiny_model(ds: &SceneDataset, subjects: &[usize]) -> Model {
    Model::new(tiny_options().into_config(ds, subjects)).unwrap()
}

pub fn tiny_config(ds: &SceneDataset, subjects: &[usize]) -> ModelConfig {
    tiny_options().into_config(ds, subjects)
}

pub fn tiny_train() -> TrainConfig {
    TrainConfig {
        patches: 2,
        patch_size: 8,
        samples_per_ray: 8,
        eval_samples: Some(8),
        eval_views: Some(2),
        eval_every: 0,
        wall_clock: false,
        ..TrainConfig::default()
    }
}
