//! 3D spatio-temporal DenseNet regressor: layers, training and map inference.

pub mod augment;
pub mod gradcheck;
pub mod infer;
pub mod io;
pub mod layers;
pub mod net;
pub mod tensor;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, AugmentConfig};
pub use infer::predict_map;
pub use net::{Adam, Model};
pub use tensor::{Real, Tensor5};
pub use train::{finetune, lr_at_epoch, train, EpochStats, TrainConfig, TrainOutput, TrainSet};

/// Network layout: a three-conv stem, dense blocks joined by average
/// pooling, then global average pooling and one affine output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSpec {
    pub stem: Vec<usize>,
    pub growth_rate: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    pub kernel: usize,
    /// Spatial stride of the first two stem convolutions.
    pub spatial_stride: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            stem: vec![8, 16, 16],
            growth_rate: 12,
            blocks: 3,
            layers_per_block: 4,
            kernel: 3,
            spatial_stride: 2,
        }
    }
}

impl ArchSpec {
    /// Narrow variant for desk-scale experiments.
    pub fn reduced() -> Self {
        Self {
            stem: vec![4, 8, 8],
            growth_rate: 4,
            ..Self::default()
        }
    }

    /// Sets the stride rule for a window size: stride 1 up to 9 px.
    pub fn for_window(mut self, window: usize) -> Self {
        self.spatial_stride = if window <= 9 { 1 } else { 2 };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem.len() != 3 || self.stem.contains(&0) {
            return Err(Error::invalid("stem", "three positive channel counts required"));
        }
        if self.blocks != 3 || self.layers_per_block != 4 {
            return Err(Error::invalid("blocks", "the network has 3 dense blocks of 4 layers"));
        }
        if self.growth_rate == 0 {
            return Err(Error::invalid("growth_rate", "must be >= 1"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::invalid("kernel", "must be odd"));
        }
        if !(1..=2).contains(&self.spatial_stride) {
            return Err(Error::invalid("spatial_stride", "must be 1 or 2"));
        }
        Ok(())
    }

    /// Checks the stride rule against a window size.
    pub fn validate_for_window(&self, window: usize) -> Result<()> {
        self.validate()?;
        if window <= 9 && self.spatial_stride != 1 {
            return Err(Error::invalid(
                "spatial_stride",
                format!("windows of {window} px need spatial stride 1"),
            ));
        }
        Ok(())
    }

    /// Channels entering the output layer.
    pub fn feature_channels(&self) -> usize {
        self.stem[2] + self.blocks * self.layers_per_block * self.growth_rate
    }
}
