//! Omni-scale gated fusion: a guidance head predicts a coarse box per pixel,
//! the box's stride-normalized scale is matched against each branch kernel's
//! effective size, and the resulting soft gate mixes six parallel scale
//! branches plus a 1x1 residual into merged features M.

use crate::autodiff::{Graph, Var};
use crate::backbone::{norm_groups, LEAKY_SLOPE};
use crate::config::{FusionMode, ModelConfig};
use crate::geometry::{kernel_iou, NormalizedScale};
use crate::lossops::{masked_sum, neg_ln_iou_map};
use crate::params::{ParamId, ParamSet, ParamVars};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("gate spatial shape {gate:?} does not match feature shape {feat:?}")]
    ShapeMismatch { gate: Vec<usize>, feat: Vec<usize> },
    #[error("expected {expected} gate weights, got {got}")]
    BranchCount { expected: usize, got: usize },
}

/// One scale branch: convolution kernel shape and which stream it runs in.
#[derive(Debug, Clone, Copy)]
pub struct BranchDef {
    /// Kernel width and height as written (kw, kh).
    pub kw: usize,
    pub kh: usize,
    /// High-resolution-stream branches convolve after a stride-2 reduction.
    pub high_res: bool,
}

impl BranchDef {
    /// Receptive size in stride units; the stride-2 stream doubles it.
    pub fn effective_size(&self) -> (f64, f64) {
        let m = if self.high_res { 2.0 } else { 1.0 };
        (self.kw as f64 * m, self.kh as f64 * m)
    }
}

pub const NUM_BRANCHES: usize = 6;
const GN_EPS: f64 = 1e-5;

/// The six branches: three kernels, each in a low- and a high-res stream.
pub const BRANCHES: [BranchDef; NUM_BRANCHES] = [
    BranchDef { kw: 3, kh: 3, high_res: false },
    BranchDef { kw: 3, kh: 5, high_res: false },
    BranchDef { kw: 5, kh: 3, high_res: false },
    BranchDef { kw: 3, kh: 3, high_res: true },
    BranchDef { kw: 3, kh: 5, high_res: true },
    BranchDef { kw: 5, kh: 3, high_res: true },
];

struct Conv {
    w: ParamId,
    b: ParamId,
}

pub struct GatedFusion {
    guide_trunk: Conv,
    guide_gamma: ParamId,
    guide_beta: ParamId,
    guide_groups: usize,
    guide_out: Conv,
    low: Vec<Conv>,
    high_reduce: Conv,
    high: Vec<Conv>,
    residual: Conv,
}

impl GatedFusion {
    pub fn register(cfg: &ModelConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.channels;
        let hidden = (d / 2).max(8);
        let guide_trunk = Conv {
            w: params.add_conv_weight("guide.trunk.w", hidden, d, 3, 3, rng),
            b: params.add_bias("guide.trunk.b", hidden, 0.0),
        };
        let guide_gamma = params.add_bias("guide.trunk.gamma", hidden, 1.0);
        let guide_beta = params.add_bias("guide.trunk.beta", hidden, 0.0);
        let guide_groups = norm_groups(hidden, cfg.gn_groups);
        // Small weights and a bias putting the initial box near one stride.
        let guide_out = Conv {
            w: params.add_conv_weight_scaled("guide.out.w", 4, hidden, 3, 3, 0.01, rng),
            b: params.add_bias("guide.out.b", 4, (std::f64::consts::E - 1.0).ln()),
        };
        let mut low = Vec::new();
        let mut high = Vec::new();
        for (i, br) in BRANCHES.iter().enumerate() {
            let prefix = if br.high_res {
                format!("fusion.high{i}")
            } else {
                format!("fusion.low{i}")
            };
            let conv = Conv {
                w: params.add_conv_weight(&format!("{prefix}.w"), d, d, br.kh, br.kw, rng),
                b: params.add_bias(&format!("{prefix}.b"), d, 0.0),
            };
            if br.high_res {
                high.push(conv);
            } else {
                low.push(conv);
            }
        }
        let high_reduce = Conv {
            w: params.add_conv_weight("fusion.reduce.w", d, d, 3, 3, rng),
            b: params.add_bias("fusion.reduce.b", d, 0.0),
        };
        let residual = Conv {
            w: params.add_conv_weight("fusion.residual.w", d, d, 1, 1, rng),
            b: params.add_bias("fusion.residual.b", d, 0.0),
        };
        GatedFusion {
            guide_trunk,
            guide_gamma,
            guide_beta,
            guide_groups,
            guide_out,
            low,
            high_reduce,
            high,
            residual,
        }
    }

    /// Per-pixel LTRB guidance boxes in pixels, `(4, H, W)`, all components
    /// non-negative via softplus, scaled by the level stride.
    pub fn predict_guidance(&self, g: &mut Graph, pv: &ParamVars, f: Var, stride: f64) -> Var {
        let t = g.conv2d(f, pv.get(self.guide_trunk.w), pv.get(self.guide_trunk.b), 1);
        let t = g.group_norm(t, pv.get(self.guide_gamma), pv.get(self.guide_beta), self.guide_groups, GN_EPS);
        let t = g.leaky_relu(t, LEAKY_SLOPE);
        let raw = g.conv2d(t, pv.get(self.guide_out.w), pv.get(self.guide_out.b), 1);
        let sp = g.softplus(raw);
        g.scale(sp, stride)
    }

    /// Stride-normalized (w, h) per pixel from plain guidance values; `(2, H, W)`.
    pub fn scales_from_guidance(values: &ArrayD<f64>, stride: f64) -> ArrayD<f64> {
        let (h, w) = (values.shape()[1], values.shape()[2]);
        ArrayD::from_shape_fn(IxDyn(&[2, h, w]), |idx| {
            let (c, y, x) = (idx[0], idx[1], idx[2]);
            if c == 0 {
                (values[IxDyn(&[0, y, x])] + values[IxDyn(&[2, y, x])]) / stride
            } else {
                (values[IxDyn(&[1, y, x])] + values[IxDyn(&[3, y, x])]) / stride
            }
        })
    }

    /// Overlap o of each branch's effective size with the per-pixel scale;
    /// six `(1, H, W)` arrays in branch order.
    pub fn branch_overlaps(scales: &ArrayD<f64>) -> Vec<ArrayD<f64>> {
        let (h, w) = (scales.shape()[1], scales.shape()[2]);
        BRANCHES
            .iter()
            .map(|br| {
                let eff = br.effective_size();
                ArrayD::from_shape_fn(IxDyn(&[1, h, w]), |idx| {
                    let s = NormalizedScale {
                        w: scales[IxDyn(&[0, idx[1], idx[2]])],
                        h: scales[IxDyn(&[1, idx[1], idx[2]])],
                    };
                    kernel_iou(&s, eff)
                })
            })
            .collect()
    }

    /// Temperature-τ softmax over the six branch overlaps, shifted by the
    /// per-pixel best overlap; six `(1, H, W)` weights summing to 1.
    pub fn gate_from_overlaps(g: &mut Graph, tau: Var, overlaps: &[ArrayD<f64>]) -> Vec<Var> {
        assert_eq!(overlaps.len(), NUM_BRANCHES);
        let shape = overlaps[0].raw_dim();
        let mut best = ArrayD::from_elem(shape, f64::NEG_INFINITY);
        for o in overlaps {
            ndarray::Zip::from(&mut best).and(o).for_each(|b, &v| *b = b.max(v));
        }
        let exps: Vec<Var> = overlaps
            .iter()
            .map(|o| {
                let shifted = g.constant(o - &best);
                let z = g.mul(tau, shifted);
                g.exp(z)
            })
            .collect();
        let mut denom = exps[0];
        for e in &exps[1..] {
            denom = g.add(denom, *e);
        }
        exps.into_iter().map(|e| g.div(e, denom)).collect()
    }

    /// The uniform 1/6 gate used by average fusion.
    pub fn uniform_gate(g: &mut Graph, h: usize, w: usize) -> Vec<Var> {
        (0..NUM_BRANCHES)
            .map(|_| g.constant(ArrayD::from_elem(IxDyn(&[1, h, w]), 1.0 / NUM_BRANCHES as f64)))
            .collect()
    }

    /// Merged features `M = sum_branch F_branch * gate_branch + residual_1x1(F)`.
    pub fn fuse(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        f: Var,
        gate: &[Var],
    ) -> Result<Var, FusionError> {
        if gate.len() != NUM_BRANCHES {
            return Err(FusionError::BranchCount { expected: NUM_BRANCHES, got: gate.len() });
        }
        let fshape = g.value(f).shape().to_vec();
        for gv in gate {
            let gshape = g.value(*gv).shape();
            if gshape.len() != 3 || gshape[1] != fshape[1] || gshape[2] != fshape[2] {
                return Err(FusionError::ShapeMismatch {
                    gate: gshape.to_vec(),
                    feat: fshape,
                });
            }
        }
        let (h, w) = (fshape[1], fshape[2]);
        let branches = self.branch_features(g, pv, f, h, w);
        let mut m: Option<Var> = None;
        for (feat, gv) in branches.into_iter().zip(gate.iter()) {
            let weighted = g.mul(feat, *gv);
            m = Some(match m {
                Some(acc) => g.add(acc, weighted),
                None => weighted,
            });
        }
        let res = self.residual_path(g, pv, f);
        Ok(g.add(m.expect("at least one branch"), res))
    }

    /// The six branch features in branch order, each `(D, H, W)`.
    fn branch_features(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        f: Var,
        h: usize,
        w: usize,
    ) -> Vec<Var> {
        let reduced = g.conv2d(f, pv.get(self.high_reduce.w), pv.get(self.high_reduce.b), 2);
        let mut low_it = self.low.iter();
        let mut high_it = self.high.iter();
        BRANCHES
            .iter()
            .map(|br| {
                if br.high_res {
                    let conv = high_it.next().unwrap();
                    let y = g.conv2d(reduced, pv.get(conv.w), pv.get(conv.b), 1);
                    g.upsample_nearest2(y, h, w)
                } else {
                    let conv = low_it.next().unwrap();
                    g.conv2d(f, pv.get(conv.w), pv.get(conv.b), 1)
                }
            })
            .collect()
    }

    /// The 1x1 residual path alone (conv fusion mode).
    pub fn residual_path(&self, g: &mut Graph, pv: &ParamVars, f: Var) -> Var {
        g.conv2d(f, pv.get(self.residual.w), pv.get(self.residual.b), 1)
    }

    /// Produce M for one level under the configured fusion mode. Returns the
    /// merged features and, for gated mode, the gate weights for diagnostics.
    ///
    /// `guidance_values` are the detached guidance predictions: the gate does
    /// not backpropagate into the guidance head.
    pub fn merge(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        mode: FusionMode,
        f: Var,
        guidance_values: &ArrayD<f64>,
        stride: f64,
        tau: f64,
    ) -> Result<(Var, Option<Vec<Var>>), FusionError> {
        let (h, w) = {
            let s = g.value(f).shape();
            (s[1], s[2])
        };
        match mode {
            FusionMode::Off => Ok((f, None)),
            FusionMode::Conv1x1 => Ok((self.residual_path(g, pv, f), None)),
            FusionMode::Average => {
                let gate = Self::uniform_gate(g, h, w);
                let m = self.fuse(g, pv, f, &gate)?;
                Ok((m, Some(gate)))
            }
            FusionMode::Gated => {
                let scales = Self::scales_from_guidance(guidance_values, stride);
                let overlaps = Self::branch_overlaps(&scales);
                let tau_v = g.scalar(tau);
                let gate = Self::gate_from_overlaps(g, tau_v, &overlaps);
                let m = self.fuse(g, pv, f, &gate)?;
                Ok((m, Some(gate)))
            }
        }
    }
}

/// Guidance loss: `sum over levels and foreground pixels of -ln IoU(pred, gt)`.
///
/// Each entry is `(pred, target, fg_mask)` for one level: pred and target are
/// `(4, H, W)` LTRB maps, the mask is a `(1, H, W)` 0/1 constant. Background
/// pixels contribute exactly zero; the empty case returns 0.
pub fn guidance_loss(g: &mut Graph, levels: &[(Var, Var, Var)]) -> Var {
    let mut total = g.scalar(0.0);
    for (pred, target, mask) in levels {
        let nli = neg_ln_iou_map(g, *pred, *target);
        let s = masked_sum(g, nli, *mask);
        total = g.add(total, s);
    }
    total
}

/// Stack six `(1, H, W)` gate values into one `(6, H, W)` array (diagnostics).
pub fn gate_values(g: &Graph, gate: &[Var]) -> ArrayD<f64> {
    let (h, w) = {
        let s = g.value(gate[0]).shape();
        (s[1], s[2])
    };
    let mut out = ArrayD::zeros(IxDyn(&[NUM_BRANCHES, h, w]));
    for (i, gv) in gate.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i)
            .assign(&g.value(*gv).index_axis(ndarray::Axis(0), 0));
    }
    out
}
