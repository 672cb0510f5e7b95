//! Tape-level building blocks for the detection losses.
//!
//! LTRB maps are `(4, H, W)` tensors with channel order left, top, right,
//! bottom, in pixels. Masks are `(1, H, W)` tensors of 0/1 indicator values.

use crate::autodiff::{Graph, Var};

/// Floor for IoU values before taking a logarithm.
pub const IOU_EPS: f64 = 1e-12;

/// Per-pixel IoU between a predicted LTRB map and a target LTRB map anchored
/// at the same pixel: intersection sides are `min(l,l') + min(r,r')` and
/// `min(t,t') + min(b,b')`. Returns a `(1, H, W)` map.
///
/// Targets must be strictly positive boxes wherever the result is consumed;
/// masked-out pixels should carry dummy positive targets so no NaN forms.
pub fn ltrb_iou_map(g: &mut Graph, pred: Var, target: Var) -> Var {
    let comp = |g: &mut Graph, v: Var, c: usize| g.slice_axis0(v, c, 1);
    let (pl, pt, pr, pb) = (
        comp(g, pred, 0),
        comp(g, pred, 1),
        comp(g, pred, 2),
        comp(g, pred, 3),
    );
    let (tl, tt, tr, tb) = (
        comp(g, target, 0),
        comp(g, target, 1),
        comp(g, target, 2),
        comp(g, target, 3),
    );

    let iw_l = g.min_elem(pl, tl);
    let iw_r = g.min_elem(pr, tr);
    let iw = g.add(iw_l, iw_r);
    let ih_t = g.min_elem(pt, tt);
    let ih_b = g.min_elem(pb, tb);
    let ih = g.add(ih_t, ih_b);
    let inter = g.mul(iw, ih);

    let pw = g.add(pl, pr);
    let ph = g.add(pt, pb);
    let area_p = g.mul(pw, ph);
    let tw = g.add(tl, tr);
    let th = g.add(tt, tb);
    let area_t = g.mul(tw, th);

    let areas = g.add(area_p, area_t);
    let union = g.sub(areas, inter);
    let union = g.clamp_min(union, IOU_EPS);
    g.div(inter, union)
}

/// `-ln(max(iou, eps))` per pixel, `(1, H, W)`.
pub fn neg_ln_iou_map(g: &mut Graph, pred: Var, target: Var) -> Var {
    let iou = ltrb_iou_map(g, pred, target);
    let safe = g.clamp_min(iou, IOU_EPS);
    let ln = g.ln(safe);
    g.neg(ln)
}

/// Focal loss map for per-class sigmoid logits against a one-hot target:
/// positives weighted by `alpha*(1-p)^gamma`, negatives by `(1-alpha)*p^gamma`.
/// Both tensors are `(C, H, W)`; the result is elementwise.
pub fn focal_loss_map(g: &mut Graph, logits: Var, onehot: Var, alpha: f64, gamma: f64) -> Var {
    let ls_pos = g.log_sigmoid(logits); // ln p
    let neg_logits = g.neg(logits);
    let ls_neg = g.log_sigmoid(neg_logits); // ln (1-p)

    let w_pos_log = g.scale(ls_neg, gamma); // gamma * ln(1-p)
    let w_pos = g.exp(w_pos_log); // (1-p)^gamma
    let pos_core = g.mul(w_pos, ls_pos);
    let pos = g.scale(pos_core, -alpha);

    let w_neg_log = g.scale(ls_pos, gamma);
    let w_neg = g.exp(w_neg_log); // p^gamma
    let neg_core = g.mul(w_neg, ls_neg);
    let neg = g.scale(neg_core, -(1.0 - alpha));

    let pos_masked = g.mul(pos, onehot);
    let one = g.scalar(1.0);
    let inv = g.sub(one, onehot);
    let neg_masked = g.mul(neg, inv);
    g.add(pos_masked, neg_masked)
}

/// Sum of `map * mask` (mask constant), as a scalar node.
pub fn masked_sum(g: &mut Graph, map: Var, mask: Var) -> Var {
    let m = g.mul(map, mask);
    g.sum_all(m)
}
