//! Reduced configurations sized for a single CPU.
//!
//! The defaults elsewhere follow the published setup (16-level grids with
//! 2^19 entries, six 32-pixel patches, 256 samples per ray). These presets
//! shrink the grids, patches, and sample counts so a few thousand steps fit
//! in minutes on one core while keeping every component in place.

use crate::cli::ModelOptions;
use crate::hashenc::GridConfig;
use crate::train::TrainConfig;

pub const DESK_LOCAL_GRID: GridConfig = GridConfig {
    levels: 8,
    half_width: 2,
    log2_table_size: 14,
    base_resolution: 8,
    max_resolution: 128,
};

pub const DESK_GLOBAL_GRID: GridConfig = GridConfig {
    levels: 4,
    half_width: 2,
    log2_table_size: 14,
    base_resolution: 8,
    max_resolution: 128,
};

pub fn desk_model() -> ModelOptions {
    ModelOptions {
        volume_resolution: [24; 3],
        local_grid: DESK_LOCAL_GRID,
        global_grid: DESK_GLOBAL_GRID,
        fg_cutoff: 1e-3,
        ..ModelOptions::default()
    }
}

pub fn desk_train() -> TrainConfig {
    TrainConfig {
        patches: 2,
        patch_size: 16,
        samples_per_ray: 48,
        eval_samples: Some(64),
        eval_views: Some(4),
        eval_every: 500,
        ..TrainConfig::default()
    }
}
