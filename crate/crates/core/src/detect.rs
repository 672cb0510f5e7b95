//! Per-pixel classification, centerness, and box regression on merged
//! features, with scale-ranged target assignment, the detection loss, and
//! decoding of score-thresholded, NMS-filtered detections.

use crate::autodiff::{sigmoid, Graph, Var};
use crate::backbone::{norm_groups, LEAKY_SLOPE};
use crate::config::ModelConfig;
use crate::geometry::{iou, ltrb_to_xyxy, pixel_center, BoxLTRB, BoxXYXY};
use crate::lossops::{focal_loss_map, masked_sum, neg_ln_iou_map};
use crate::params::{ParamId, ParamSet, ParamVars};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;
/// Classification bias init so the initial foreground probability is ~0.01.
const PRIOR_PROB: f64 = 0.01;
const GN_EPS: f64 = 1e-5;

struct Conv {
    w: ParamId,
    b: ParamId,
}

struct TrunkBlock {
    conv: Conv,
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

/// Head shared across pyramid levels; regression is scaled by each level's
/// stride so one set of weights serves all scales.
pub struct DetectionHead {
    trunk: Vec<TrunkBlock>,
    cls: Conv,
    ctr: Conv,
    reg: Conv,
}

/// Per-level raw head outputs on the tape.
#[derive(Clone, Copy)]
pub struct LevelOutputs {
    /// Class logits `(C, H, W)`.
    pub cls: Var,
    /// Centerness logit `(1, H, W)`.
    pub ctr: Var,
    /// LTRB regression in pixels `(4, H, W)`, non-negative.
    pub reg: Var,
}

/// Per-level assigned training targets (plain arrays).
#[derive(Debug, Clone)]
pub struct LevelTargets {
    /// Category id per pixel; `None` marks background.
    pub category: Vec<Option<usize>>,
    /// One-hot categories `(C, H, W)`.
    pub onehot: ArrayD<f64>,
    /// Target LTRB `(4, H, W)`; background pixels hold a dummy unit box.
    pub ltrb: ArrayD<f64>,
    /// Centerness targets `(1, H, W)`, zero on background.
    pub centerness: ArrayD<f64>,
    /// Foreground mask `(1, H, W)` of 0/1.
    pub fg: ArrayD<f64>,
    pub n_fg: usize,
    pub h: usize,
    pub w: usize,
}

/// A decoded prediction.
#[derive(Debug, Clone)]
pub struct Detection {
    pub bbox: BoxXYXY,
    pub category: usize,
    pub score: f64,
}

/// Detection loss components (tape nodes) plus the foreground count.
pub struct DetectionLoss {
    pub cls: Var,
    pub ctr: Var,
    pub reg: Var,
    pub total: Var,
    pub n_fg: usize,
}

impl DetectionHead {
    pub fn register(cfg: &ModelConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.channels;
        let trunk = (0..2)
            .map(|i| TrunkBlock {
                conv: Conv {
                    w: params.add_conv_weight(&format!("det.trunk{i}.w"), d, d, 3, 3, rng),
                    b: params.add_bias(&format!("det.trunk{i}.b"), d, 0.0),
                },
                gamma: params.add_bias(&format!("det.trunk{i}.gamma"), d, 1.0),
                beta: params.add_bias(&format!("det.trunk{i}.beta"), d, 0.0),
                groups: norm_groups(d, cfg.gn_groups),
            })
            .collect();
        let cls_bias = -((1.0 - PRIOR_PROB) / PRIOR_PROB).ln();
        let cls = Conv {
            w: params.add_conv_weight_scaled("det.cls.w", cfg.num_categories, d, 3, 3, 0.01, rng),
            b: params.add_bias("det.cls.b", cfg.num_categories, cls_bias),
        };
        let ctr = Conv {
            w: params.add_conv_weight_scaled("det.ctr.w", 1, d, 3, 3, 0.01, rng),
            b: params.add_bias("det.ctr.b", 1, 0.0),
        };
        let reg = Conv {
            w: params.add_conv_weight_scaled("det.reg.w", 4, d, 3, 3, 0.01, rng),
            b: params.add_bias("det.reg.b", 4, (std::f64::consts::E - 1.0).ln()),
        };
        DetectionHead { trunk, cls, ctr, reg }
    }

    pub fn forward(&self, g: &mut Graph, pv: &ParamVars, m: Var, stride: f64) -> LevelOutputs {
        let mut t = m;
        for block in &self.trunk {
            let y = g.conv2d(t, pv.get(block.conv.w), pv.get(block.conv.b), 1);
            let n = g.group_norm(y, pv.get(block.gamma), pv.get(block.beta), block.groups, GN_EPS);
            t = g.leaky_relu(n, LEAKY_SLOPE);
        }
        let cls = g.conv2d(t, pv.get(self.cls.w), pv.get(self.cls.b), 1);
        let ctr = g.conv2d(t, pv.get(self.ctr.w), pv.get(self.ctr.b), 1);
        let reg_raw = g.conv2d(t, pv.get(self.reg.w), pv.get(self.reg.b), 1);
        let reg_sp = g.softplus(reg_raw);
        let reg = g.scale(reg_sp, stride);
        LevelOutputs { cls, ctr, reg }
    }
}

/// FCOS-style centerness of an LTRB target.
pub fn centerness(ltrb: &BoxLTRB) -> f64 {
    let lr_max = ltrb.l.max(ltrb.r);
    let tb_max = ltrb.t.max(ltrb.b);
    if lr_max <= 0.0 || tb_max <= 0.0 {
        return 0.0;
    }
    ((ltrb.l.min(ltrb.r) / lr_max) * (ltrb.t.min(ltrb.b) / tb_max)).sqrt()
}

/// Assign ground-truth boxes to pyramid levels and pixels.
///
/// A box belongs to the unique level whose scale range `(lo, hi]` contains
/// its longest side. Within that level every grid cell whose center falls
/// inside the box is foreground; cells covered by several boxes take the
/// smallest-area one.
pub fn assign_targets(
    gt: &[(BoxXYXY, usize)],
    cfg: &ModelConfig,
    img_h: usize,
    img_w: usize,
) -> Vec<LevelTargets> {
    let c = cfg.num_categories;
    cfg.levels
        .iter()
        .map(|level| {
            let h = img_h.div_ceil(level.stride);
            let w = img_w.div_ceil(level.stride);
            let mut category = vec![None; h * w];
            let mut best_area = vec![f64::INFINITY; h * w];
            let mut ltrb = ArrayD::from_elem(IxDyn(&[4, h, w]), 1.0);
            let mut ctr_t = ArrayD::zeros(IxDyn(&[1, h, w]));
            let mut onehot = ArrayD::zeros(IxDyn(&[c, h, w]));
            let mut fg = ArrayD::zeros(IxDyn(&[1, h, w]));
            let stride = level.stride as f64;

            for (bx, cat) in gt {
                let side = bx.width().max(bx.height());
                if !(side > level.scale_lo && side <= level.scale_hi) {
                    continue;
                }
                let area = bx.area();
                // Cells whose center could be inside the box.
                let i0 = (bx.x1 / stride - 0.5).ceil().max(0.0) as usize;
                let j0 = (bx.y1 / stride - 0.5).ceil().max(0.0) as usize;
                for j in j0..h {
                    for i in i0..w {
                        let (cx, cy) = pixel_center(i, j, stride);
                        if cx > bx.x2 {
                            break;
                        }
                        if cy > bx.y2 {
                            break;
                        }
                        if !bx.contains(cx, cy) {
                            continue;
                        }
                        let pix = j * w + i;
                        if area >= best_area[pix] {
                            continue;
                        }
                        best_area[pix] = area;
                        if let Some(old) = category[pix] {
                            onehot[IxDyn(&[old, j, i])] = 0.0;
                        }
                        category[pix] = Some(*cat);
                        onehot[IxDyn(&[*cat, j, i])] = 1.0;
                        let d = BoxLTRB {
                            l: cx - bx.x1,
                            t: cy - bx.y1,
                            r: bx.x2 - cx,
                            b: bx.y2 - cy,
                        };
                        ltrb[IxDyn(&[0, j, i])] = d.l;
                        ltrb[IxDyn(&[1, j, i])] = d.t;
                        ltrb[IxDyn(&[2, j, i])] = d.r;
                        ltrb[IxDyn(&[3, j, i])] = d.b;
                        ctr_t[IxDyn(&[0, j, i])] = centerness(&d);
                        fg[IxDyn(&[0, j, i])] = 1.0;
                    }
                }
            }
            let n_fg = category.iter().flatten().count();
            LevelTargets { category, onehot, ltrb, centerness: ctr_t, fg, n_fg, h, w }
        })
        .collect()
}

/// Detection loss over all levels: focal classification over every pixel,
/// centerness BCE and IoU regression over foreground pixels, all normalized
/// by the total foreground count (1 when there is none).
pub fn detection_loss(
    g: &mut Graph,
    outputs: &[LevelOutputs],
    targets: &[LevelTargets],
) -> DetectionLoss {
    assert_eq!(outputs.len(), targets.len());
    let n_fg: usize = targets.iter().map(|t| t.n_fg).sum();
    let norm = 1.0 / n_fg.max(1) as f64;

    let mut cls_sum = g.scalar(0.0);
    let mut ctr_sum = g.scalar(0.0);
    let mut reg_sum = g.scalar(0.0);
    for (out, tgt) in outputs.iter().zip(targets.iter()) {
        let onehot = g.constant(tgt.onehot.clone());
        let focal = focal_loss_map(g, out.cls, onehot, FOCAL_ALPHA, FOCAL_GAMMA);
        let f = g.sum_all(focal);
        cls_sum = g.add(cls_sum, f);

        let mask = g.constant(tgt.fg.clone());
        let ctr_target = g.constant(tgt.centerness.clone());
        let bce = g.bce_with_logits(out.ctr, ctr_target);
        let cmasked = masked_sum(g, bce, mask);
        ctr_sum = g.add(ctr_sum, cmasked);

        let ltrb_target = g.constant(tgt.ltrb.clone());
        let nli = neg_ln_iou_map(g, out.reg, ltrb_target);
        let rmasked = masked_sum(g, nli, mask);
        reg_sum = g.add(reg_sum, rmasked);
    }
    let cls = g.scale(cls_sum, norm);
    let ctr = g.scale(ctr_sum, norm);
    let reg = g.scale(reg_sum, norm);
    let ct = g.add(cls, ctr);
    let total = g.add(ct, reg);
    DetectionLoss { cls, ctr, reg, total, n_fg }
}

/// Plain-value head outputs for one level, used for decoding.
pub struct LevelMaps {
    pub cls: ArrayD<f64>,
    pub ctr: ArrayD<f64>,
    pub reg: ArrayD<f64>,
    pub stride: usize,
}

/// Decode thresholded detections and apply greedy per-category NMS.
///
/// The score is class probability times centerness probability. Candidates
/// are ordered by descending score with a deterministic coordinate tie-break.
pub fn decode_detections(
    levels: &[LevelMaps],
    score_threshold: f64,
    nms_iou: f64,
) -> Vec<Detection> {
    let mut candidates = Vec::new();
    for maps in levels {
        let c = maps.cls.shape()[0];
        let (h, w) = (maps.cls.shape()[1], maps.cls.shape()[2]);
        for j in 0..h {
            for i in 0..w {
                let ctr_p = sigmoid(maps.ctr[IxDyn(&[0, j, i])]);
                for cat in 0..c {
                    let p = sigmoid(maps.cls[IxDyn(&[cat, j, i])]);
                    let score = (p * ctr_p).clamp(0.0, 1.0);
                    if score <= score_threshold {
                        continue;
                    }
                    let d = BoxLTRB {
                        l: maps.reg[IxDyn(&[0, j, i])],
                        t: maps.reg[IxDyn(&[1, j, i])],
                        r: maps.reg[IxDyn(&[2, j, i])],
                        b: maps.reg[IxDyn(&[3, j, i])],
                    };
                    let bbox = ltrb_to_xyxy(&d, (i, j), maps.stride as f64)
                        .expect("regression outputs are non-negative");
                    candidates.push(Detection { bbox, category: cat, score });
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.bbox.x1.partial_cmp(&b.bbox.x1).unwrap())
            .then(a.bbox.y1.partial_cmp(&b.bbox.y1).unwrap())
            .then(a.bbox.x2.partial_cmp(&b.bbox.x2).unwrap())
            .then(a.bbox.y2.partial_cmp(&b.bbox.y2).unwrap())
            .then(a.category.cmp(&b.category))
    });

    let mut kept: Vec<Detection> = Vec::new();
    for cand in candidates {
        let suppressed = kept
            .iter()
            .any(|k| k.category == cand.category && iou(&k.bbox, &cand.bbox) > nms_iou);
        if !suppressed {
            kept.push(cand);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LevelSpec;
    use proptest::prelude::*;
    use rand::prelude::*;

    fn desk_cfg() -> ModelConfig {
        ModelConfig::default()
    }

    fn single_level_cfg(stride: usize) -> ModelConfig {
        ModelConfig {
            num_categories: 3,
            levels: vec![LevelSpec {
                k: 3,
                stride,
                scale_lo: -1.0,
                scale_hi: f64::INFINITY,
            }],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn box_center_pixel_has_unit_centerness() {
        let cfg = single_level_cfg(8);
        let gt = vec![(BoxXYXY::new(0.0, 0.0, 8.0, 8.0).unwrap(), 1usize)];
        let t = &assign_targets(&gt, &cfg, 16, 16)[0];
        assert_eq!(t.n_fg, 1);
        assert_eq!(t.centerness[IxDyn(&[0, 0, 0])], 1.0);
        assert_eq!(t.category[0], Some(1));
        for c in 0..4 {
            assert_eq!(t.ltrb[IxDyn(&[c, 0, 0])], 4.0);
        }
    }

    #[test]
    fn forty_pixel_box_lands_on_coarsest_level_only() {
        let cfg = desk_cfg();
        let gt = vec![(BoxXYXY::new(10.0, 10.0, 50.0, 50.0).unwrap(), 0usize)];
        let t = assign_targets(&gt, &cfg, 128, 128);
        assert_eq!(t[0].n_fg, 0, "stride-8 level should be empty");
        assert_eq!(t[1].n_fg, 0, "stride-16 level should be empty");
        assert!(t[2].n_fg >= 1, "stride-32 level should own the box");
    }

    #[test]
    fn nested_boxes_resolve_to_smaller_area() {
        let cfg = single_level_cfg(8);
        let gt = vec![
            (BoxXYXY::new(0.0, 0.0, 14.0, 14.0).unwrap(), 0usize),
            (BoxXYXY::new(2.0, 2.0, 12.0, 12.0).unwrap(), 2usize),
        ];
        let t = &assign_targets(&gt, &cfg, 16, 16)[0];
        // pixel (0,0) center (4,4) is inside both; the smaller box wins
        assert_eq!(t.category[0], Some(2));
        assert_eq!(t.ltrb[IxDyn(&[0, 0, 0])], 2.0);
        assert_eq!(t.onehot[IxDyn(&[0, 0, 0])], 0.0);
        assert_eq!(t.onehot[IxDyn(&[2, 0, 0])], 1.0);
    }

    #[test]
    fn focal_loss_matches_hand_computation_at_uniform_probability() {
        // logits z with sigmoid(z) = 1/3 at every class, one fg pixel, C=3
        let cfg = single_level_cfg(8);
        let gt = vec![(BoxXYXY::new(0.0, 0.0, 8.0, 8.0).unwrap(), 1usize)];
        let targets = assign_targets(&gt, &cfg, 8, 8);
        let z = (0.5f64).ln(); // sigmoid = 1/3

        let mut g = Graph::new();
        let outputs = vec![LevelOutputs {
            cls: g.constant(ArrayD::from_elem(IxDyn(&[3, 1, 1]), z)),
            ctr: g.constant(ArrayD::zeros(IxDyn(&[1, 1, 1]))),
            reg: g.constant(targets[0].ltrb.clone()),
        }];
        let loss = detection_loss(&mut g, &outputs, &targets);

        let expected_cls = 0.25 * (2.0f64 / 3.0).powi(2) * 3.0f64.ln()
            + 2.0 * 0.75 * (1.0f64 / 3.0).powi(2) * 1.5f64.ln();
        assert!((g.scalar_value(loss.cls) - expected_cls).abs() < 1e-9);
        // exact regression -> zero; centerness logit 0 against target 1 -> ln 2
        assert!(g.scalar_value(loss.reg).abs() < 1e-12);
        assert!((g.scalar_value(loss.ctr) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn near_perfect_outputs_drive_loss_to_zero() {
        let cfg = single_level_cfg(8);
        let gt = vec![(BoxXYXY::new(0.0, 0.0, 8.0, 8.0).unwrap(), 1usize)];
        let targets = assign_targets(&gt, &cfg, 8, 8);

        let mut g = Graph::new();
        let cls = ArrayD::from_shape_fn(IxDyn(&[3, 1, 1]), |idx| if idx[0] == 1 { 20.0 } else { -20.0 });
        let outputs = vec![LevelOutputs {
            cls: g.constant(cls),
            ctr: g.constant(ArrayD::from_elem(IxDyn(&[1, 1, 1]), 20.0)),
            reg: g.constant(targets[0].ltrb.clone()),
        }];
        let loss = detection_loss(&mut g, &outputs, &targets);
        assert!(g.scalar_value(loss.total) < 1e-3);
        assert!(g.scalar_value(loss.total) >= 0.0);
    }

    #[test]
    fn no_foreground_keeps_losses_finite_and_zero() {
        let cfg = single_level_cfg(8);
        let targets = assign_targets(&[], &cfg, 16, 16);
        let mut g = Graph::new();
        let outputs = vec![LevelOutputs {
            cls: g.constant(ArrayD::from_elem(IxDyn(&[3, 2, 2]), -4.0)),
            ctr: g.constant(ArrayD::from_elem(IxDyn(&[1, 2, 2]), 3.0)),
            reg: g.constant(ArrayD::from_elem(IxDyn(&[4, 2, 2]), 5.0)),
        }];
        let loss = detection_loss(&mut g, &outputs, &targets);
        assert_eq!(g.scalar_value(loss.ctr), 0.0);
        assert_eq!(g.scalar_value(loss.reg), 0.0);
        assert!(g.scalar_value(loss.cls).is_finite());
        assert!(g.scalar_value(loss.cls) > 0.0);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            channels: 8,
            ..single_level_cfg(8)
        };
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let head = DetectionHead::register(&cfg, &mut params, &mut rng);
        let m_arr = ArrayD::from_shape_fn(IxDyn(&[8, 4, 4]), |_| rng.random_range(-1.0..1.0));
        let gt = vec![(BoxXYXY::new(3.0, 3.0, 21.0, 26.0).unwrap(), 1usize)];
        let targets = assign_targets(&gt, &cfg, 32, 32);
        assert!(targets[0].n_fg > 0);

        let loss_for = |p: &ParamSet| {
            let mut g = Graph::new();
            let pv = p.bind(&mut g);
            let m = g.constant(m_arr.clone());
            let out = head.forward(&mut g, &pv, m, 8.0);
            let loss = detection_loss(&mut g, &[out], &targets);
            (g, pv, loss.total)
        };

        for name in ["det.cls.w", "det.ctr.b", "det.reg.w", "det.trunk0.w"] {
            let id = params.lookup(name).unwrap();
            let (g, pv, total) = loss_for(&params);
            let grads = g.backward(total);
            let analytic = grads.get(pv.get(id)).expect("missing gradient").clone();
            let x0 = params.value(id).clone();
            let fd = crate::autodiff::finite_difference(
                &mut |x: &ArrayD<f64>| {
                    let mut p = params.clone();
                    *p.value_mut(id) = x.clone();
                    let (g, _, total) = loss_for(&p);
                    g.scalar_value(total)
                },
                &x0,
                1e-5,
            );
            let err = crate::autodiff::max_relative_error(&analytic, &fd);
            assert!(err < 1e-3, "{name} grad rel err {err:.3e}");
        }
    }

    fn maps_from_boxes(boxes: &[(f64, f64, f64, f64, usize, f64)], hw: usize) -> LevelMaps {
        // Place each box at the grid cell containing its center.
        let stride = 8usize;
        let (h, w) = (hw, hw);
        let mut cls = ArrayD::from_elem(IxDyn(&[3, h, w]), -40.0);
        let ctr = ArrayD::from_elem(IxDyn(&[1, h, w]), 40.0);
        let mut reg = ArrayD::from_elem(IxDyn(&[4, h, w]), 1.0);
        for &(x1, y1, x2, y2, cat, score) in boxes {
            let cx = 0.5 * (x1 + x2);
            let cy = 0.5 * (y1 + y2);
            let i = (cx / stride as f64 - 0.5).round() as usize;
            let j = (cy / stride as f64 - 0.5).round() as usize;
            let (pcx, pcy) = pixel_center(i, j, stride as f64);
            reg[IxDyn(&[0, j, i])] = pcx - x1;
            reg[IxDyn(&[1, j, i])] = pcy - y1;
            reg[IxDyn(&[2, j, i])] = x2 - pcx;
            reg[IxDyn(&[3, j, i])] = y2 - pcy;
            // centerness prob ~1, so cls prob = score
            let logit = (score / (1.0 - score)).ln();
            cls[IxDyn(&[cat, j, i])] = logit;
        }
        LevelMaps { cls, ctr, reg, stride }
    }

    #[test]
    fn decode_empty_below_threshold() {
        let maps = LevelMaps {
            cls: ArrayD::from_elem(IxDyn(&[3, 4, 4]), -40.0),
            ctr: ArrayD::zeros(IxDyn(&[1, 4, 4])),
            reg: ArrayD::from_elem(IxDyn(&[4, 4, 4]), 2.0),
            stride: 8,
        };
        assert!(decode_detections(&[maps], 0.05, 0.5).is_empty());
    }

    #[test]
    fn nms_keeps_one_of_identical_boxes() {
        // Two adjacent cells regressing to the same rectangle with
        // different confidences; only the stronger one should survive.
        let mut maps = maps_from_boxes(&[(8.0, 8.0, 24.0, 24.0, 1, 0.9)], 6);
        let logit = (0.8f64 / 0.2).ln();
        maps.cls[IxDyn(&[1, 2, 3])] = logit;
        let (pcx, pcy) = pixel_center(3, 2, 8.0);
        maps.reg[IxDyn(&[0, 2, 3])] = pcx - 8.0;
        maps.reg[IxDyn(&[1, 2, 3])] = pcy - 8.0;
        maps.reg[IxDyn(&[2, 2, 3])] = 24.0 - pcx;
        maps.reg[IxDyn(&[3, 2, 3])] = 24.0 - pcy;

        let dets = decode_detections(&[maps], 0.1, 0.5);
        assert_eq!(dets.len(), 1);
        assert!((dets[0].score - 0.9).abs() < 1e-6);
    }

    #[test]
    fn nms_keeps_separated_boxes() {
        // IoU of these two is 4*16/(2*64-64/4*... ) computed below ~0.23 < 0.5
        let maps = maps_from_boxes(
            &[
                (8.0, 8.0, 24.0, 24.0, 0, 0.9),
                (16.0, 8.0, 32.0, 24.0, 0, 0.8),
            ],
            6,
        );
        let a = BoxXYXY::new(8.0, 8.0, 24.0, 24.0).unwrap();
        let b = BoxXYXY::new(16.0, 8.0, 32.0, 24.0).unwrap();
        assert!(iou(&a, &b) < 0.5);
        let dets = decode_detections(&[maps], 0.1, 0.5);
        assert_eq!(dets.len(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn decode_count_monotone_in_threshold(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let maps = LevelMaps {
                cls: ArrayD::from_shape_fn(IxDyn(&[3, 4, 4]), |_| rng.random_range(-4.0..4.0)),
                ctr: ArrayD::from_shape_fn(IxDyn(&[1, 4, 4]), |_| rng.random_range(-4.0..4.0)),
                reg: ArrayD::from_shape_fn(IxDyn(&[4, 4, 4]), |_| rng.random_range(0.5..20.0)),
                stride: 8,
            };
            let lo = decode_detections(std::slice::from_ref(&maps), 0.1, 0.5).len();
            let hi = decode_detections(std::slice::from_ref(&maps), 0.3, 0.5).len();
            prop_assert!(hi <= lo);
        }

        #[test]
        fn every_separated_box_gets_a_foreground_pixel(
            seed in 0u64..500, n in 1usize..4,
        ) {
            let cfg = desk_cfg();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // carve the image into quadrants so boxes never overlap
            let anchors = [(0.0, 0.0), (64.0, 0.0), (0.0, 64.0), (64.0, 64.0)];
            let gt: Vec<(BoxXYXY, usize)> = (0..n)
                .map(|q| {
                    let (ax, ay) = anchors[q];
                    let side: f64 = rng.random_range(10.0..60.0);
                    let x1 = ax + rng.random_range(0.0..(64.0 - side).max(0.01));
                    let y1 = ay + rng.random_range(0.0..(64.0 - side).max(0.01));
                    (BoxXYXY::new(x1, y1, x1 + side, y1 + side).unwrap(), q % 3)
                })
                .collect();
            let targets = assign_targets(&gt, &cfg, 128, 128);
            let covered: usize = targets.iter().map(|t| t.n_fg).sum();
            prop_assert!(covered >= n, "some box got no foreground pixel");
            // every gt's own level has at least one pixel with its ltrb
            for (bx, _) in &gt {
                let side = bx.width().max(bx.height());
                let idx = cfg.levels.iter().position(|l| side > l.scale_lo && side <= l.scale_hi).unwrap();
                prop_assert!(targets[idx].n_fg >= 1);
            }
        }
    }
}
