//! Pixel-level, instance-level, and category-level domain discriminators.
//!
//! Pixel and instance discriminators classify each feature location as
//! source or target and train adversarially through gradient reversal. The
//! category discriminator emits a `(2C, H, W)` map whose channel `2c + d`
//! pairs category `c` with domain `d`; its discriminability loss sharpens
//! category structure on the direct path while its consistency loss aligns
//! domains within each category through the reversal layer. Only confident
//! pixels (relative to the batch-max detection probability) participate.

use crate::autodiff::{sigmoid, Graph, Var};
use crate::config::ModelConfig;
use crate::data::Domain;
use crate::params::{ParamId, ParamSet, ParamVars};
use ndarray::{ArrayD, Axis, IxDyn, Slice};
use rand_chacha::ChaCha8Rng;

const GN_EPS: f64 = 1e-5;

struct Block {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

/// Four convolution-groupnorm-relu blocks plus a final 3x3 projection;
/// spatial dimensions pass through unchanged.
pub struct DiscriminatorNet {
    blocks: Vec<Block>,
    out_w: ParamId,
    out_b: ParamId,
    groups: usize,
}

impl DiscriminatorNet {
    pub fn register(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        groups: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut blocks = Vec::with_capacity(4);
        let mut c_in = in_channels;
        for i in 0..4 {
            blocks.push(Block {
                w: params.add_conv_weight(&format!("{prefix}.block{i}.w"), width, c_in, 3, 3, rng),
                b: params.add_bias(&format!("{prefix}.block{i}.b"), width, 0.0),
                gamma: params.add_bias(&format!("{prefix}.block{i}.gamma"), width, 1.0),
                beta: params.add_bias(&format!("{prefix}.block{i}.beta"), width, 0.0),
            });
            c_in = width;
        }
        let out_w = params.add_conv_weight(&format!("{prefix}.out.w"), out_channels, width, 3, 3, rng);
        let out_b = params.add_bias(&format!("{prefix}.out.b"), out_channels, 0.0);
        DiscriminatorNet { blocks, out_w, out_b, groups }
    }

    pub fn forward(&self, g: &mut Graph, pv: &ParamVars, x: Var) -> Var {
        let mut t = x;
        for block in &self.blocks {
            let y = g.conv2d(t, pv.get(block.w), pv.get(block.b), 1);
            let n = g.group_norm(y, pv.get(block.gamma), pv.get(block.beta), self.groups, GN_EPS);
            t = g.relu(n);
        }
        g.conv2d(t, pv.get(self.out_w), pv.get(self.out_b), 1)
    }
}

/// All discriminators of the model: per-level pixel and instance nets plus
/// one category net shared across levels.
pub struct Discriminators {
    pub pixel: Vec<DiscriminatorNet>,
    pub instance: Vec<DiscriminatorNet>,
    pub category: DiscriminatorNet,
}

impl Discriminators {
    pub fn register(cfg: &ModelConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.channels;
        let w = cfg.disc_channels;
        let groups = cfg.gn_groups;
        let pixel = cfg
            .levels
            .iter()
            .map(|l| {
                DiscriminatorNet::register(&format!("disc.pix{}", l.k), d, 1, w, groups, params, rng)
            })
            .collect();
        let instance = cfg
            .levels
            .iter()
            .map(|l| {
                DiscriminatorNet::register(&format!("disc.ins{}", l.k), d, 1, w, groups, params, rng)
            })
            .collect();
        let category = DiscriminatorNet::register(
            "disc.cat",
            d,
            2 * cfg.num_categories,
            w,
            groups,
            params,
            rng,
        );
        Discriminators { pixel, instance, category }
    }
}

fn leveled_domain_loss(
    g: &mut Graph,
    pv: &ParamVars,
    nets: &[DiscriminatorNet],
    levels: &[Var],
    domain: Domain,
    grl_lambda: f64,
) -> Var {
    assert_eq!(nets.len(), levels.len());
    let mut acc = g.scalar(0.0);
    for (net, &f) in nets.iter().zip(levels.iter()) {
        let reversed = g.grl(f, grl_lambda);
        let logits = net.forward(g, pv, reversed);
        let target_arr = ArrayD::from_elem(g.value(logits).raw_dim(), domain.adversarial_label());
        let target = g.constant(target_arr);
        let bce = g.bce_with_logits(logits, target);
        let mean = g.mean_all(bce);
        acc = g.add(acc, mean);
    }
    g.scale(acc, 1.0 / nets.len().max(1) as f64)
}

/// Per-image domain loss of the pixel discriminators on backbone features:
/// binary cross-entropy against the domain tag, averaged per pixel and per
/// level, with features passing through gradient reversal.
pub fn pixel_domain_loss(
    g: &mut Graph,
    pv: &ParamVars,
    nets: &[DiscriminatorNet],
    f_levels: &[Var],
    domain: Domain,
    grl_lambda: f64,
) -> Var {
    leveled_domain_loss(g, pv, nets, f_levels, domain, grl_lambda)
}

/// Same contract as [`pixel_domain_loss`] with merged features as input.
pub fn instance_domain_loss(
    g: &mut Graph,
    pv: &ParamVars,
    nets: &[DiscriminatorNet],
    m_levels: &[Var],
    domain: Domain,
    grl_lambda: f64,
) -> Var {
    leveled_domain_loss(g, pv, nets, m_levels, domain, grl_lambda)
}

/// Confident-pixel selection over a whole batch.
#[derive(Debug, Clone)]
pub struct SelectionSet {
    /// Batch maximum of the per-pixel category probability.
    pub p_bar: f64,
    /// 0/1 masks `(1, H, W)` indexed `[image][level]`.
    pub masks: Vec<Vec<ArrayD<f64>>>,
    /// Total number of selected pixels.
    pub count: usize,
}

/// Per-pixel max-category probability `(1, H, W)` from class logits.
pub fn max_category_probability(cls_logits: &ArrayD<f64>) -> ArrayD<f64> {
    let (c, h, w) = (cls_logits.shape()[0], cls_logits.shape()[1], cls_logits.shape()[2]);
    ArrayD::from_shape_fn(IxDyn(&[1, h, w]), |idx| {
        (0..c)
            .map(|cat| sigmoid(cls_logits[IxDyn(&[cat, idx[1], idx[2]])]))
            .fold(0.0, f64::max)
    })
}

/// Keep pixels whose probability strictly exceeds `theta` times the batch
/// maximum. With everything zero (or `theta = 1`) the set is empty.
pub fn select_important(p_maps: &[Vec<ArrayD<f64>>], theta: f64) -> SelectionSet {
    assert!(theta > 0.0 && theta <= 1.0, "theta must lie in (0, 1]");
    let p_bar = p_maps
        .iter()
        .flatten()
        .flat_map(|m| m.iter().copied())
        .fold(0.0, f64::max);
    let cut = theta * p_bar;
    let mut count = 0;
    let masks = p_maps
        .iter()
        .map(|levels| {
            levels
                .iter()
                .map(|p| {
                    p.mapv(|v| {
                        if v > cut {
                            count += 1;
                            1.0
                        } else {
                            0.0
                        }
                    })
                })
                .collect()
        })
        .collect();
    SelectionSet { p_bar, masks, count }
}

/// One-hot pseudo labels on the selected pixels of one (image, level) map.
#[derive(Debug, Clone)]
pub struct PseudoLabels {
    /// Category one-hot `(C, H, W)`, zero off the selection.
    pub y_dis: ArrayD<f64>,
    /// (category, domain) one-hot `(2C, H, W)`, hot at channel `2c + d`.
    pub y_sim: ArrayD<f64>,
}

/// Label selected pixels with the detector's argmax category; the domain
/// channel parity comes from the image's tag.
pub fn build_pseudo_labels(
    cls_logits: &ArrayD<f64>,
    domain: Domain,
    mask: &ArrayD<f64>,
) -> PseudoLabels {
    let (c, h, w) = (cls_logits.shape()[0], cls_logits.shape()[1], cls_logits.shape()[2]);
    let mut y_dis = ArrayD::zeros(IxDyn(&[c, h, w]));
    let mut y_sim = ArrayD::zeros(IxDyn(&[2 * c, h, w]));
    for j in 0..h {
        for i in 0..w {
            if mask[IxDyn(&[0, j, i])] == 0.0 {
                continue;
            }
            let mut best = 0;
            for cat in 1..c {
                if cls_logits[IxDyn(&[cat, j, i])] > cls_logits[IxDyn(&[best, j, i])] {
                    best = cat;
                }
            }
            y_dis[IxDyn(&[best, j, i])] = 1.0;
            y_sim[IxDyn(&[2 * best + domain.channel_offset(), j, i])] = 1.0;
        }
    }
    PseudoLabels { y_dis, y_sim }
}

/// One (image, level) contribution to the category losses.
pub struct CategoryItem {
    /// Category map from the direct feature path.
    pub m_hat_dis: Var,
    /// Category map from the gradient-reversed feature path.
    pub m_hat_sim: Var,
    pub labels: PseudoLabels,
    pub mask: ArrayD<f64>,
}

fn channel(arr: &ArrayD<f64>, c: usize) -> ArrayD<f64> {
    arr.slice_axis(Axis(0), Slice::from(c..c + 1)).to_owned()
}

/// Sum over selected pixels of the cross-entropy between the
/// category-marginal softmax of `m_hat` and the pseudo category label.
fn discriminability_sum(g: &mut Graph, m_hat: Var, labels: &PseudoLabels, mask: &ArrayD<f64>) -> Var {
    let c = labels.y_dis.shape()[0];
    let zs: Vec<Var> = (0..c)
        .map(|cat| {
            let a = g.slice_axis0(m_hat, 2 * cat, 1);
            let b = g.slice_axis0(m_hat, 2 * cat + 1, 1);
            g.add(a, b)
        })
        .collect();
    // detached per-pixel shift keeps the softmax exact and stable
    let mut shift = g.value(zs[0]).clone();
    for &z in &zs[1..] {
        shift.zip_mut_with(g.value(z), |m, &v| *m = m.max(v));
    }
    let shift = g.constant(shift);
    let mut sum_exp: Option<Var> = None;
    let mut picked: Option<Var> = None;
    for (cat, &z) in zs.iter().enumerate() {
        let centered = g.sub(z, shift);
        let e = g.exp(centered);
        sum_exp = Some(match sum_exp {
            None => e,
            Some(acc) => g.add(acc, e),
        });
        let y = g.constant(channel(&labels.y_dis, cat));
        let zy = g.mul(z, y);
        picked = Some(match picked {
            None => zy,
            Some(acc) => g.add(acc, zy),
        });
    }
    let log_sum = g.ln(sum_exp.expect("at least one category"));
    let lse_shifted = g.add(log_sum, shift);
    let ce = g.sub(lse_shifted, picked.expect("at least one category"));
    let m = g.constant(mask.clone());
    let masked = g.mul(ce, m);
    g.sum_all(masked)
}

/// Sum over selected pixels of the within-category two-way domain
/// cross-entropy of `m_hat` against the pseudo (category, domain) label.
fn consistency_sum(g: &mut Graph, m_hat: Var, labels: &PseudoLabels, mask: &ArrayD<f64>) -> Var {
    let c2 = labels.y_sim.shape()[0];
    let mut acc: Option<Var> = None;
    for cat in 0..c2 / 2 {
        let a = g.slice_axis0(m_hat, 2 * cat, 1);
        let b = g.slice_axis0(m_hat, 2 * cat + 1, 1);
        let ba = g.sub(b, a);
        let ab = g.sub(a, b);
        let loss_a = g.softplus(ba);
        let loss_b = g.softplus(ab);
        let ya = g.constant(channel(&labels.y_sim, 2 * cat));
        let yb = g.constant(channel(&labels.y_sim, 2 * cat + 1));
        let ta = g.mul(loss_a, ya);
        let tb = g.mul(loss_b, yb);
        let pair = g.add(ta, tb);
        acc = Some(match acc {
            None => pair,
            Some(prev) => g.add(prev, pair),
        });
    }
    let m = g.constant(mask.clone());
    let masked = g.mul(acc.expect("at least one pair"), m);
    g.sum_all(masked)
}

fn selected_count(items: &[CategoryItem]) -> usize {
    items
        .iter()
        .map(|it| it.mask.iter().filter(|&&v| v != 0.0).count())
        .sum()
}

/// Category discriminability loss, averaged over all selected pixels in the
/// batch; consumes the direct (non-reversed) maps.
pub fn category_discriminability_loss(g: &mut Graph, items: &[CategoryItem]) -> Var {
    let count = selected_count(items);
    let mut total = g.scalar(0.0);
    for item in items {
        let s = discriminability_sum(g, item.m_hat_dis, &item.labels, &item.mask);
        total = g.add(total, s);
    }
    g.scale(total, 1.0 / count.max(1) as f64)
}

/// Category consistency loss, averaged over all selected pixels in the
/// batch; consumes the gradient-reversed maps.
pub fn category_consistency_loss(g: &mut Graph, items: &[CategoryItem]) -> Var {
    let count = selected_count(items);
    let mut total = g.scalar(0.0);
    for item in items {
        let s = consistency_sum(g, item.m_hat_sim, &item.labels, &item.mask);
        total = g.add(total, s);
    }
    g.scale(total, 1.0 / count.max(1) as f64)
}

/// Weighted combination of the two category losses.
pub fn category_loss(g: &mut Graph, l_dis: Var, l_sim: Var, lambda_dis: f64, lambda_sim: f64) -> Var {
    let a = g.scale(l_dis, lambda_dis);
    let b = g.scale(l_sim, lambda_sim);
    g.add(a, b)
}

/// Diagnostic: per-pixel category distribution `(C, H, W)` from the
/// marginal softmax over paired channels.
pub fn category_marginal_probs(m_hat: &ArrayD<f64>) -> ArrayD<f64> {
    let (c2, h, w) = (m_hat.shape()[0], m_hat.shape()[1], m_hat.shape()[2]);
    let c = c2 / 2;
    let mut out = ArrayD::zeros(IxDyn(&[c, h, w]));
    for j in 0..h {
        for i in 0..w {
            let z: Vec<f64> = (0..c)
                .map(|cat| m_hat[IxDyn(&[2 * cat, j, i])] + m_hat[IxDyn(&[2 * cat + 1, j, i])])
                .collect();
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - mx).exp()).sum();
            for cat in 0..c {
                out[IxDyn(&[cat, j, i])] = (z[cat] - mx).exp() / sum;
            }
        }
    }
    out
}

/// Diagnostic: per-pixel domain distribution `(2C, H, W)`; each
/// (source, target) channel pair sums to one.
pub fn pair_domain_probs(m_hat: &ArrayD<f64>) -> ArrayD<f64> {
    let (c2, h, w) = (m_hat.shape()[0], m_hat.shape()[1], m_hat.shape()[2]);
    let mut out = ArrayD::zeros(IxDyn(&[c2, h, w]));
    for j in 0..h {
        for i in 0..w {
            for cat in 0..c2 / 2 {
                let a = m_hat[IxDyn(&[2 * cat, j, i])];
                let b = m_hat[IxDyn(&[2 * cat + 1, j, i])];
                let pa = sigmoid(a - b);
                out[IxDyn(&[2 * cat, j, i])] = pa;
                out[IxDyn(&[2 * cat + 1, j, i])] = 1.0 - pa;
            }
        }
    }
    out
}
