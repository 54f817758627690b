//! The shared desk-scale benchmark: scene distribution, split sizes and the
//! training configuration the ablations start from.

use super::prepare::{prepare_all, BaseSample};
use super::synth::{expand_rot_test_set, generate_scenes, SceneParams};
use super::trainer::{TrainConfig, TrainData};
use crate::data::Sample;
use crate::error::Result;
use crate::model::ModelConfig;

pub const TRAIN_SCENES: usize = 500;
pub const EVAL_SCENES: usize = 100;
/// Scenes expanded into the rotated test split (six views each).
pub const ROTATED_SCENES: usize = 20;
/// Inverse fraction of the inverse-heavy splits.
pub const INVERSE_HEAVY: f64 = 0.4;

/// Seed offsets keeping the splits disjoint.
const TRAIN_STREAM: u64 = 0x7472_6169;
const EVAL_STREAM: u64 = 0x6576_616c;
const ROTATED_STREAM: u64 = 0x726f_7461;

pub fn benchmark_model() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_heads: 4,
        n_deform_points: 4,
        n_encoder_layers: 1,
        n_decoder_layers: 3,
        num_queries: 10,
        num_points: 8,
        stem_channels: [8, 16],
        ffn_dim: 64,
        ..ModelConfig::default()
    }
}

pub fn benchmark_config() -> TrainConfig {
    TrainConfig { model: benchmark_model(), learning_rate: 3e-4, ..TrainConfig::default() }
}

/// Ribbons bent and tilted enough that a single box describes many
/// instances poorly.
pub fn benchmark_scenes(inverse_prob: f64) -> SceneParams {
    SceneParams {
        length: (0.45, 0.8),
        curvature: (-0.3, 0.3),
        max_tilt: 45.0,
        inverse_prob,
        ..SceneParams::default()
    }
}

fn samples(seed: u64, count: usize, params: &SceneParams) -> Result<Vec<Sample>> {
    Ok(generate_scenes(seed, count, params)?.into_iter().map(|s| s.into_sample()).collect())
}

/// `count` training scenes for a data seed.
pub fn train_split(seed: u64, count: usize, inverse_prob: f64) -> Result<Vec<Sample>> {
    samples(seed ^ TRAIN_STREAM, count, &benchmark_scenes(inverse_prob))
}

/// Held-out scenes drawn from the same distribution as training.
pub fn eval_split(seed: u64, count: usize, inverse_prob: f64) -> Result<Vec<Sample>> {
    samples(seed ^ EVAL_STREAM, count, &benchmark_scenes(inverse_prob))
}

/// Held-out scenes, each kept upright and turned by every large test angle.
pub fn rotated_split(seed: u64, count: usize) -> Result<Vec<Sample>> {
    let scenes = generate_scenes(seed ^ ROTATED_STREAM, count, &benchmark_scenes(SceneParams::default().inverse_prob))?;
    Ok(expand_rot_test_set(&scenes).into_iter().map(|s| s.into_sample()).collect())
}

/// Training inputs plus a prepared held-out split for `cfg`.
pub fn train_data(cfg: &TrainConfig, train: &[Sample], eval: &[Sample], eval_split: &str) -> Result<TrainData> {
    let (size, n) = (cfg.model.image_size, cfg.model.num_points);
    Ok(TrainData {
        train: train.iter().map(|s| BaseSample::new(s, n)).collect::<Result<_>>()?,
        eval: prepare_all(eval, size, n, cfg.label_mode)?,
        eval_split: eval_split.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint_and_sized() {
        let a = train_split(0, 3, 0.03).unwrap();
        let b = eval_split(0, 3, 0.03).unwrap();
        assert_eq!(a.len(), 3);
        assert_ne!(a[0].image, b[0].image);
        assert_eq!(rotated_split(0, 2).unwrap().len(), 12);
        benchmark_config().validate().unwrap();
    }
}
