pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod hashenc;
pub mod image;
pub mod metrics;
pub mod model;
pub mod params;
pub mod posecode;
pub mod presets;
pub mod render;
pub mod skeleton;
pub mod skinning;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};

// Training allocates and frees many large buffers per step.
#[cfg(feature = "mimalloc")]
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
