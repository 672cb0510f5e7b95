//! Architecture configuration shared by the network modules and checkpoints.

use serde::{Deserialize, Serialize};

/// One pyramid level: index `k`, its stride, and the object-scale range
/// `(lo, hi]` (longest box side in pixels) it is responsible for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub k: usize,
    pub stride: usize,
    pub scale_lo: f64,
    pub scale_hi: f64,
}

/// How merged features M are produced from base features F.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Overlap-gated mixture of the six scale branches plus the 1x1 residual.
    Gated,
    /// Uniform 1/6 weights over the six branches plus the residual.
    Average,
    /// The 1x1 residual path alone.
    Conv1x1,
    /// Fusion disabled: M = F.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of object categories C.
    pub num_categories: usize,
    /// Channel count D shared by all pyramid levels.
    pub channels: usize,
    pub levels: Vec<LevelSpec>,
    /// Gate softmax temperature.
    pub tau: f64,
    /// Hidden width of the discriminator conv stacks.
    pub disc_channels: usize,
    /// Group count for discriminator group normalization.
    pub gn_groups: usize,
    pub fusion: FusionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_categories: 3,
            channels: 64,
            levels: vec![
                LevelSpec { k: 3, stride: 8, scale_lo: -1.0, scale_hi: 16.0 },
                LevelSpec { k: 4, stride: 16, scale_lo: 16.0, scale_hi: 32.0 },
                LevelSpec { k: 5, stride: 32, scale_lo: 32.0, scale_hi: f64::INFINITY },
            ],
            tau: 10.0,
            disc_channels: 32,
            gn_groups: 8,
            fusion: FusionMode::Gated,
        }
    }
}

impl ModelConfig {
    pub fn max_stride(&self) -> usize {
        self.levels.iter().map(|l| l.stride).max().unwrap_or(1)
    }

    /// Feature-map size at each level for an `h x w` image.
    pub fn level_shapes(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        self.levels
            .iter()
            .map(|l| (h.div_ceil(l.stride), w.div_ceil(l.stride)))
            .collect()
    }
}
