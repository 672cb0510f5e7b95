//! Convolutional backbone plus top-down pyramid producing the multi-level
//! base feature maps F^k.
//!
//! The backbone is a chain of stride-2 3x3 convolutions, each followed by
//! group normalization and a leaky rectifier; stage `n` has stride `2^n`.
//! A pyramid level with stride `2^k` taps stage `k`, gets a 1x1 lateral
//! projection, is merged top-down with the next-coarser level by nearest
//! upsampling, and is finished with a 3x3 smoothing convolution.

use crate::autodiff::{Graph, Var};
use crate::config::ModelConfig;
use crate::params::{ParamId, ParamSet, ParamVars};
use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BackboneError {
    #[error("image dimension {dim} is not divisible by level stride {stride}")]
    IndivisibleImage { dim: usize, stride: usize },
    #[error("input must be a 3-channel CHW image, got shape {0:?}")]
    BadInput(Vec<usize>),
}

struct Conv {
    w: ParamId,
    b: ParamId,
}

struct Stage {
    conv: Conv,
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

/// Activation slope shared by backbone and head trunks; keeps gradient flow
/// through units a large early update would otherwise kill.
pub const LEAKY_SLOPE: f64 = 0.1;
const GN_EPS: f64 = 1e-5;

/// Largest group count no bigger than `preferred` that divides `width`.
pub fn norm_groups(width: usize, preferred: usize) -> usize {
    let mut groups = preferred.clamp(1, width);
    while width % groups != 0 {
        groups -= 1;
    }
    groups
}

pub struct BackboneFpn {
    stages: Vec<Stage>,
    /// Lateral 1x1 and smoothing 3x3 convs, one pair per configured level.
    lateral: Vec<Conv>,
    smooth: Vec<Conv>,
}

impl BackboneFpn {
    pub fn register(cfg: &ModelConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.channels;
        let max_k = cfg.levels.iter().map(|l| l.k).max().expect("no levels");
        // Widths ramp up to D by stage 3 and stay there.
        let mut widths = vec![3usize];
        for n in 1..=max_k {
            widths.push(match n {
                1 => (d / 4).max(8),
                2 => (d / 2).max(16),
                _ => d,
            });
        }
        let stages = (1..=max_k)
            .map(|n| Stage {
                conv: Conv {
                    w: params.add_conv_weight(
                        &format!("backbone.stage{n}.w"),
                        widths[n],
                        widths[n - 1],
                        3,
                        3,
                        rng,
                    ),
                    b: params.add_bias(&format!("backbone.stage{n}.b"), widths[n], 0.0),
                },
                gamma: params.add_bias(&format!("backbone.stage{n}.gamma"), widths[n], 1.0),
                beta: params.add_bias(&format!("backbone.stage{n}.beta"), widths[n], 0.0),
                groups: norm_groups(widths[n], cfg.gn_groups),
            })
            .collect();
        let lateral = cfg
            .levels
            .iter()
            .map(|l| Conv {
                w: params.add_conv_weight(&format!("fpn.lateral{}.w", l.k), d, d, 1, 1, rng),
                b: params.add_bias(&format!("fpn.lateral{}.b", l.k), d, 0.0),
            })
            .collect();
        let smooth = cfg
            .levels
            .iter()
            .map(|l| Conv {
                w: params.add_conv_weight(&format!("fpn.smooth{}.w", l.k), d, d, 3, 3, rng),
                b: params.add_bias(&format!("fpn.smooth{}.b", l.k), d, 0.0),
            })
            .collect();
        BackboneFpn { stages, lateral, smooth }
    }

    /// Base feature maps F^k in the order of `cfg.levels` (ascending k).
    pub fn forward(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        cfg: &ModelConfig,
        image: &ArrayD<f64>,
    ) -> Result<Vec<Var>, BackboneError> {
        if image.ndim() != 3 || image.shape()[0] != 3 {
            return Err(BackboneError::BadInput(image.shape().to_vec()));
        }
        let (h, w) = (image.shape()[1], image.shape()[2]);
        for l in &cfg.levels {
            for dim in [h, w] {
                if dim % l.stride != 0 {
                    return Err(BackboneError::IndivisibleImage { dim, stride: l.stride });
                }
            }
        }

        let raw = g.constant(image.clone());
        // Center the [0, 1] pixel range before the first convolution.
        let mut x = {
            let doubled = g.scale(raw, 2.0);
            g.add_scalar(doubled, -1.0)
        };
        // stage_out[k] holds the stride-2^k feature map for tapped stages.
        let mut stage_out = vec![None; self.stages.len() + 1];
        for (n, stage) in self.stages.iter().enumerate() {
            let y = g.conv2d(x, pv.get(stage.conv.w), pv.get(stage.conv.b), 2);
            let nrm = g.group_norm(y, pv.get(stage.gamma), pv.get(stage.beta), stage.groups, GN_EPS);
            x = g.leaky_relu(nrm, LEAKY_SLOPE);
            stage_out[n + 1] = Some(x);
        }

        // Top-down: start at the coarsest configured level.
        let order: Vec<usize> = (0..cfg.levels.len()).rev().collect();
        let mut merged = vec![None; cfg.levels.len()];
        let mut above: Option<Var> = None;
        for idx in order {
            let level = &cfg.levels[idx];
            let c = stage_out[level.k].expect("stage not computed");
            let mut p = g.conv2d(c, pv.get(self.lateral[idx].w), pv.get(self.lateral[idx].b), 1);
            if let Some(coarser) = above {
                let (ph, pw) = (g.value(p).shape()[1], g.value(p).shape()[2]);
                let up = g.upsample_nearest2(coarser, ph, pw);
                p = g.add(p, up);
            }
            above = Some(p);
            let s = g.conv2d(p, pv.get(self.smooth[idx].w), pv.get(self.smooth[idx].b), 1);
            merged[idx] = Some(s);
        }
        Ok(merged.into_iter().map(|v| v.unwrap()).collect())
    }
}
