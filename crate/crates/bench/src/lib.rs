//! Shared fixtures for the benchmarks.

use ptdet_core::model::ModelConfig;
use ptdet_core::train::{generate_scenes, prepare_all, LabelMode, Prepared, SceneParams};

/// A batch of prepared synthetic scenes at the model's input size.
pub fn scene_batch(cfg: &ModelConfig, count: usize, seed: u64) -> Vec<Prepared> {
    let samples: Vec<_> = generate_scenes(seed, count, &SceneParams::default())
        .expect("default scene parameters are valid")
        .into_iter()
        .map(|s| s.into_sample())
        .collect();
    prepare_all(&samples, cfg.image_size, cfg.num_points, LabelMode::Positional).expect("scenes prepare")
}

/// Row-major `[count, size*size]` image tensor data for a batch.
pub fn image_rows(batch: &[Prepared]) -> Vec<f64> {
    batch.iter().flat_map(|p| p.image.iter().copied()).collect()
}
