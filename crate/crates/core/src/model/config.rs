use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// One sine-encoded box per instance shared by all of its point queries.
    BoxBaseline,
    /// Every point query carries its own encoded coordinate, refined per layer.
    ExplicitPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfsaMode {
    /// Intra-instance attention followed by inter-instance attention.
    Fsa,
    /// As `Fsa`, with the circular-convolution branch fused in.
    Efsa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_deform_points: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub num_queries: usize,
    pub num_points: usize,
    pub efsa_conv_layers: usize,
    /// Total neighbours covered by the circular kernel (kernel size is this plus one).
    pub efsa_neighborhood: usize,
    pub query_mode: QueryMode,
    pub efsa_mode: EfsaMode,
    /// Square input side in pixels.
    pub image_size: usize,
    /// Channels of the first two stem convolutions; the third produces `d_model`.
    pub stem_channels: [usize; 2],
    /// Stride of each of the three stem convolutions (1 or 2).
    #[serde(default = "default_stem_strides")]
    pub stem_strides: [usize; 3],
    pub ffn_dim: usize,
    /// Width and height of the anchor every proposal delta is applied to.
    pub anchor_size: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 8,
            n_deform_points: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 3,
            num_queries: 20,
            num_points: 8,
            efsa_conv_layers: 1,
            efsa_neighborhood: 4,
            query_mode: QueryMode::ExplicitPoint,
            efsa_mode: EfsaMode::Efsa,
            image_size: 64,
            stem_channels: [16, 32],
            stem_strides: default_stem_strides(),
            ffn_dim: 128,
            anchor_size: 0.25,
        }
    }
}

fn default_stem_strides() -> [usize; 3] {
    [2, 2, 2]
}

impl ModelConfig {
    /// The frozen configuration used by the whole-model gradient check.
    pub fn tiny() -> Self {
        Self {
            d_model: 16,
            n_heads: 2,
            n_deform_points: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 2,
            num_queries: 2,
            num_points: 4,
            efsa_neighborhood: 2,
            image_size: 32,
            stem_channels: [4, 8],
            ffn_dim: 16,
            ..Self::default()
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.efsa_neighborhood + 1
    }

    /// Total downsampling factor of the stem.
    pub fn stem_stride(&self) -> usize {
        self.stem_strides.iter().product()
    }

    pub fn feature_size(&self) -> usize {
        self.image_size / self.stem_stride()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_points < 4 || self.num_points % 2 != 0 {
            return fail(format!("num_points {} must be even and >= 4", self.num_points));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.d_model % 4 != 0 {
            return fail(format!("d_model {} not divisible by 4", self.d_model));
        }
        if self.efsa_neighborhood % 2 != 0 {
            return fail(format!("efsa_neighborhood {} must be even", self.efsa_neighborhood));
        }
        if self.efsa_mode == EfsaMode::Efsa && self.kernel_size() > self.num_points {
            return fail(format!(
                "circular kernel {} exceeds {} points",
                self.kernel_size(),
                self.num_points
            ));
        }
        if self.stem_strides.iter().any(|s| !(1..=2).contains(s)) {
            return fail(format!("stem strides {:?} must each be 1 or 2", self.stem_strides));
        }
        if self.image_size % self.stem_stride() != 0 || self.feature_size() == 0 {
            return fail(format!(
                "image_size {} must be a positive multiple of the stem stride {}",
                self.image_size,
                self.stem_stride()
            ));
        }
        let positions = self.feature_size().pow(2);
        if self.num_queries == 0 || self.num_queries > positions {
            return fail(format!(
                "num_queries {} must lie in 1..={positions} memory positions",
                self.num_queries
            ));
        }
        if self.n_decoder_layers == 0 || self.n_deform_points == 0 {
            return fail("decoder layers and deformable points must be positive".into());
        }
        if !(self.anchor_size > 0.0 && self.anchor_size < 1.0) {
            return fail(format!("anchor_size {} must lie in (0, 1)", self.anchor_size));
        }
        Ok(())
    }
}
