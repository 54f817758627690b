//! The point-query detection transformer.

pub mod check;
mod checkpoint;
mod config;
mod layers;
mod net;
mod prior;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use config::{EfsaMode, ModelConfig, QueryMode};
pub use layers::{
    baseline_box_query_encode, deformable_attention, efsa, efsa_local_branch,
    positional_query_encode, QueryLayout,
};
pub use net::{grid_centers, DetectionOutput, EncoderOutput, LayerOutput, Model};
pub use prior::{point_update, prior_points_sampling, AnchorBoxProposal};

#[cfg(test)]
mod tests;
