//! Detection quality metrics: per-category average precision at a fixed IoU
//! threshold, mAP, and area-stratified mAP, plus an exhaustive brute-force
//! oracle that validates the fast matcher on tiny instances.

use crate::detect::Detection;
use crate::geometry::{iou, BoxXYXY};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// COCO-style area strata `(lo, hi]`: small, medium, large.
pub const AREA_RANGES: [(f64, f64); 3] = [
    (f64::NEG_INFINITY, 1024.0),
    (1024.0, 9216.0),
    (9216.0, f64::INFINITY),
];

/// One scored detection pooled across images for a single category.
#[derive(Debug, Clone, Copy)]
pub struct DetRecord {
    pub image: usize,
    pub score: f64,
    pub bbox: BoxXYXY,
}

/// One ground-truth box pooled across images for a single category.
#[derive(Debug, Clone, Copy)]
pub struct GtRecord {
    pub image: usize,
    pub bbox: BoxXYXY,
}

/// Per-dataset metric summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// AP@threshold per category; `None` where the category has no GT.
    pub per_category_ap: Vec<Option<f64>>,
    /// Mean over categories with at least one GT (0 when none qualify).
    pub map: f64,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub n_gt: usize,
    pub n_detections: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("oracle accepts at most 8 detections and 4 ground truths, got {dets}/{gts}")]
    TooLarge { dets: usize, gts: usize },
    #[error("oracle found {0} score-order-feasible assignments instead of one")]
    AmbiguousAssignment(usize),
}

fn sort_records(detections: &[DetRecord]) -> Vec<DetRecord> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.image.cmp(&b.image))
            .then(a.bbox.x1.partial_cmp(&b.bbox.x1).unwrap())
            .then(a.bbox.y1.partial_cmp(&b.bbox.y1).unwrap())
            .then(a.bbox.x2.partial_cmp(&b.bbox.x2).unwrap())
            .then(a.bbox.y2.partial_cmp(&b.bbox.y2).unwrap())
    });
    sorted
}

fn in_range(area: f64, range: Option<(f64, f64)>) -> bool {
    match range {
        None => true,
        Some((lo, hi)) => area > lo && area <= hi,
    }
}

/// Greedy score-ordered matching: detection index -> GT index.
fn greedy_match(sorted: &[DetRecord], gts: &[GtRecord], iou_threshold: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    sorted
        .iter()
        .map(|det| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                if taken[gi] || gt.image != det.image {
                    continue;
                }
                let overlap = iou(&det.bbox, &gt.bbox);
                if overlap < iou_threshold {
                    continue;
                }
                if best.map_or(true, |(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
            if let Some((gi, _)) = best {
                taken[gi] = true;
                Some(gi)
            } else {
                None
            }
        })
        .collect()
}

/// Integrate the monotone precision envelope over recall from cumulative
/// true/false positive flags; `None` without ground truth in range.
fn pr_integral(flags: &[Option<bool>], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for flag in flags.iter().flatten() {
        if *flag {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut envelope: Vec<f64> = points.iter().map(|&(_, p)| p).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in points.iter().enumerate() {
        ap += (recall - prev_recall) * envelope[i];
        prev_recall = recall;
    }
    Some(ap)
}

/// Average precision for one category at `iou_threshold`.
///
/// Detections are sorted by descending score (deterministic tie-break) and
/// matched greedily, each GT at most once, preferring the highest IoU among
/// the remaining. An `area_range` keeps only GTs with `lo < area <= hi` in
/// the recall base; detections matched to out-of-range GTs are ignored
/// rather than counted as false positives. Returns `None` when no GT lies
/// in range (an undefined cell, excluded from means).
pub fn average_precision(
    detections: &[DetRecord],
    gts: &[GtRecord],
    iou_threshold: f64,
    area_range: Option<(f64, f64)>,
) -> Option<f64> {
    let sorted = sort_records(detections);
    let matches = greedy_match(&sorted, gts, iou_threshold);
    let flags: Vec<Option<bool>> = matches
        .iter()
        .map(|m| match m {
            Some(gi) => in_range(gts[*gi].bbox.area(), area_range).then_some(true),
            None => Some(false),
        })
        .collect();
    let n_gt = gts
        .iter()
        .filter(|gt| in_range(gt.bbox.area(), area_range))
        .count();
    pr_integral(&flags, n_gt)
}

/// Cumulative (recall, precision) points in descending-score order, the raw
/// curve behind [`average_precision`] without area filtering. Empty when
/// there are no detections or no ground truth.
pub fn precision_recall_points(
    detections: &[DetRecord],
    gts: &[GtRecord],
    iou_threshold: f64,
) -> Vec<(f64, f64)> {
    if gts.is_empty() {
        return Vec::new();
    }
    let sorted = sort_records(detections);
    let matches = greedy_match(&sorted, gts, iou_threshold);
    let (mut tp, mut fp) = (0usize, 0usize);
    matches
        .iter()
        .map(|m| {
            if m.is_some() {
                tp += 1;
            } else {
                fp += 1;
            }
            (tp as f64 / gts.len() as f64, tp as f64 / (tp + fp) as f64)
        })
        .collect()
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Full report over a dataset: detections and ground truths are parallel
/// per-image lists; categories without any GT are excluded from every mean.
pub fn evaluate(
    detections: &[Vec<Detection>],
    gts: &[Vec<(BoxXYXY, usize)>],
    num_categories: usize,
    iou_threshold: f64,
) -> EvalReport {
    assert_eq!(detections.len(), gts.len(), "per-image lists must align");
    let mut per_category_ap = Vec::with_capacity(num_categories);
    let mut strata: [Vec<Option<f64>>; 3] = Default::default();
    for cat in 0..num_categories {
        let dets: Vec<DetRecord> = detections
            .iter()
            .enumerate()
            .flat_map(|(image, list)| {
                list.iter()
                    .filter(|d| d.category == cat)
                    .map(move |d| DetRecord { image, score: d.score, bbox: d.bbox })
            })
            .collect();
        let gt: Vec<GtRecord> = gts
            .iter()
            .enumerate()
            .flat_map(|(image, list)| {
                list.iter()
                    .filter(|(_, c)| *c == cat)
                    .map(move |(bbox, _)| GtRecord { image, bbox: *bbox })
            })
            .collect();
        per_category_ap.push(average_precision(&dets, &gt, iou_threshold, None));
        for (s, range) in strata.iter_mut().zip(AREA_RANGES.iter()) {
            s.push(average_precision(&dets, &gt, iou_threshold, Some(*range)));
        }
    }
    EvalReport {
        map: mean_defined(&per_category_ap).unwrap_or(0.0),
        ap_small: mean_defined(&strata[0]),
        ap_medium: mean_defined(&strata[1]),
        ap_large: mean_defined(&strata[2]),
        per_category_ap,
        n_gt: gts.iter().map(Vec::len).sum(),
        n_detections: detections.iter().map(Vec::len).sum(),
    }
}

/// Brute-force reference for [`average_precision`] on tiny instances.
///
/// Enumerates every injective detection-to-GT assignment whose pairs clear
/// the IoU threshold, keeps the unique one consistent with score-ordered
/// greedy matching, and integrates the PR curve by direct summation.
pub fn oracle_average_precision(
    detections: &[DetRecord],
    gts: &[GtRecord],
    iou_threshold: f64,
    area_range: Option<(f64, f64)>,
) -> Result<Option<f64>, OracleError> {
    if detections.len() > 8 || gts.len() > 4 {
        return Err(OracleError::TooLarge { dets: detections.len(), gts: gts.len() });
    }
    let sorted = sort_records(detections);
    let overlap = |d: &DetRecord, g: &GtRecord| {
        if d.image == g.image {
            iou(&d.bbox, &g.bbox)
        } else {
            0.0
        }
    };

    // every injective assignment with all pairs above threshold
    let mut assignments: Vec<Vec<Option<usize>>> = vec![Vec::new()];
    for det in &sorted {
        let mut grown = Vec::new();
        for partial in &assignments {
            grown.push({
                let mut none_case = partial.clone();
                none_case.push(None);
                none_case
            });
            for (gi, gt) in gts.iter().enumerate() {
                if partial.contains(&Some(gi)) || overlap(det, gt) < iou_threshold {
                    continue;
                }
                let mut next = partial.clone();
                next.push(Some(gi));
                grown.push(next);
            }
        }
        assignments = grown;
    }

    // keep assignments reproducing the greedy choice at every score rank
    let feasible: Vec<&Vec<Option<usize>>> = assignments
        .iter()
        .filter(|assign| {
            let mut used: Vec<usize> = Vec::new();
            for (di, slot) in assign.iter().enumerate() {
                let mut best: Option<(usize, f64)> = None;
                for (gi, gt) in gts.iter().enumerate() {
                    if used.contains(&gi) {
                        continue;
                    }
                    let o = overlap(&sorted[di], gt);
                    if o >= iou_threshold && best.map_or(true, |(_, b)| o > b) {
                        best = Some((gi, o));
                    }
                }
                let expected = best.map(|(gi, _)| gi);
                if *slot != expected {
                    return false;
                }
                if let Some(gi) = slot {
                    used.push(*gi);
                }
            }
            true
        })
        .collect();
    if feasible.len() != 1 {
        return Err(OracleError::AmbiguousAssignment(feasible.len()));
    }
    let assignment = feasible[0];

    let n_gt = gts
        .iter()
        .filter(|gt| in_range(gt.bbox.area(), area_range))
        .count();
    if n_gt == 0 {
        return Ok(None);
    }

    // direct summation: precision at each true positive times the recall
    // step, maximizing precision over equal-or-later ranks by rescanning
    let mut considered: Vec<bool> = Vec::new();
    for slot in assignment {
        match slot {
            Some(gi) => {
                if in_range(gts[*gi].bbox.area(), area_range) {
                    considered.push(true);
                } else {
                    // ignored: matched to an out-of-range ground truth
                }
            }
            None => considered.push(false),
        }
    }
    let precision_at = |rank: usize| {
        let tp = considered[..=rank].iter().filter(|&&t| t).count();
        tp as f64 / (rank + 1) as f64
    };
    let mut ap = 0.0;
    for (rank, &is_tp) in considered.iter().enumerate() {
        if !is_tp {
            continue;
        }
        let mut best = 0.0f64;
        for later in rank..considered.len() {
            best = best.max(precision_at(later));
        }
        ap += best / n_gt as f64;
    }
    Ok(Some(ap))
}
