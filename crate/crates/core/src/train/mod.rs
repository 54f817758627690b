//! Matching, losses, synthetic data and the training and ablation loops.

mod ablate;
pub mod benchmark;
mod hungarian;
mod loss;
mod prepare;
pub mod synth;
mod trainer;

pub use ablate::{
    ablate, default_grid, AblationConfig, AblationReport, AblationRow, AblationSplits, SeedResult,
};
pub use hungarian::{hungarian_match, MatchResult};
pub use loss::{detection_loss, DetectionLoss, LayerLoss, LossBreakdown, LossWeights};
pub use prepare::{prepare_all, BaseSample, LabelMode, Prepared};
pub use synth::{
    derive_seed, expand_rot_test_set, generate_scenes, generate_synthetic_scene, rotate_scene,
    SceneMeta, SceneParams, Spine, SyntheticScene,
};
pub use trainer::{
    evaluate, metrics_csv, train, EvalReport, EvalSettings, MetricsRow, TrainConfig, TrainData,
    TrainOutcome, BEST_CHECKPOINT, FINAL_CHECKPOINT, LAST_GOOD_CHECKPOINT, METRICS_FILE,
    METRICS_HEADER,
};
