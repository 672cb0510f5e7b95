//! `adaptdet eval`: detect on a split, score against its annotations, and
//! emit the report plus per-category PR curves.

use crate::config::RunConfig;
use crate::error::CliError;
use crate::plot::{self, Series, PALETTE};
use adaptdet_core::checkpoint;
use adaptdet_core::data::load_dataset;
use adaptdet_core::evaluation::{
    average_precision, evaluate, oracle_average_precision, precision_recall_points, DetRecord,
    EvalReport, GtRecord, OracleError, AREA_RANGES,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "  n/a".into(),
    }
}

/// Evaluate `ckpt_path` on the configured split. `model_pinned` marks that
/// the config file explicitly fixes the `[model]` section, which must then
/// agree with the checkpoint.
pub fn run(
    cfg: &RunConfig,
    ckpt_path: &Path,
    oracle_check: bool,
    model_pinned: bool,
) -> Result<EvalReport, CliError> {
    let out = cfg.resolved_output();
    cfg.write_effective(&out)?;

    let trainer = checkpoint::load(ckpt_path)?;
    if model_pinned && cfg.model != trainer.model.cfg {
        return Err(CliError::Config(format!(
            "model section does not match checkpoint {}: config {:?}, checkpoint {:?}",
            ckpt_path.display(),
            cfg.model,
            trainer.model.cfg
        )));
    }
    let num_categories = trainer.model.cfg.num_categories;
    let data = load_dataset(
        &cfg.data.split_dir(&cfg.eval.split),
        &cfg.data.annotations,
        num_categories,
    )?;

    let mut detections = Vec::with_capacity(data.len());
    let mut gts = Vec::with_capacity(data.len());
    for img in &data {
        detections.push(trainer.model.detect_image(
            &trainer.params,
            &img.pixels,
            cfg.eval.score_threshold,
            cfg.eval.nms_iou,
        )?);
        gts.push(img.objects.clone());
    }
    let report = evaluate(&detections, &gts, num_categories, cfg.eval.iou_threshold);

    let report_path = out.join("eval_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
        .map_err(|e| CliError::Io(format!("write {}", report_path.display()), e))?;

    for cat in 0..num_categories {
        let dets: Vec<DetRecord> = detections
            .iter()
            .enumerate()
            .flat_map(|(i, per_img)| {
                per_img
                    .iter()
                    .filter(|d| d.category == cat)
                    .map(move |d| DetRecord { image: i, score: d.score, bbox: d.bbox })
            })
            .collect();
        let gt_records: Vec<GtRecord> = gts
            .iter()
            .enumerate()
            .flat_map(|(i, per_img)| {
                per_img
                    .iter()
                    .filter(|(_, c)| *c == cat)
                    .map(move |(b, _)| GtRecord { image: i, bbox: *b })
            })
            .collect();
        let points = precision_recall_points(&dets, &gt_records, cfg.eval.iou_threshold);
        if points.is_empty() {
            continue;
        }
        let series = vec![Series {
            label: format!("category {cat}"),
            color: PALETTE[(cat + 1) % PALETTE.len()],
            points,
        }];
        plot::line_chart(
            &out.join(format!("pr_category_{cat}.png")),
            &series,
            Some(((0.0, 1.0), (0.0, 1.0))),
        )?;
    }

    if oracle_check {
        let max_dev = oracle_agreement(cfg.train.seed)?;
        println!("oracle agreement on 100 micro-instances: max deviation {max_dev:.3e}");
    }

    println!(
        "split {}: {} images, {} GT boxes, {} detections",
        cfg.eval.split,
        data.len(),
        report.n_gt,
        report.n_detections
    );
    println!(
        "mAP@{:.2} {:.4}  AP^S {}  AP^M {}  AP^L {}",
        cfg.eval.iou_threshold,
        report.map,
        fmt_opt(report.ap_small),
        fmt_opt(report.ap_medium),
        fmt_opt(report.ap_large),
    );
    for (cat, ap) in report.per_category_ap.iter().enumerate() {
        println!("  category {cat}: AP {}", fmt_opt(*ap));
    }
    println!("report: {}", report_path.display());
    Ok(report)
}

/// Re-validate the fast AP against the exhaustive oracle on 100 random
/// micro-instances; returns the largest |fast - oracle|.
fn oracle_agreement(seed: u64) -> Result<f64, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(9);
    let mut verified = 0usize;
    let mut attempts = 0usize;
    let mut max_dev: f64 = 0.0;
    while verified < 100 {
        attempts += 1;
        if attempts > 10_000 {
            return Err(CliError::Usage(
                "oracle check could not build 100 unambiguous micro-instances".into(),
            ));
        }
        let (dets, gts) = random_micro_instance(&mut rng);
        let range = match verified % 3 {
            0 => None,
            1 => Some(AREA_RANGES[0]),
            _ => Some(AREA_RANGES[2]),
        };
        let slow = match oracle_average_precision(&dets, &gts, 0.5, range) {
            Ok(v) => v,
            Err(OracleError::AmbiguousAssignment(_)) => continue,
            Err(e) => return Err(CliError::Usage(format!("oracle check: {e}"))),
        };
        let fast = average_precision(&dets, &gts, 0.5, range);
        match (fast, slow) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                max_dev = max_dev.max((a - b).abs());
                if (a - b).abs() > 1e-9 {
                    return Err(CliError::Usage(format!(
                        "oracle disagreement: fast {a} vs oracle {b}"
                    )));
                }
            }
            other => {
                return Err(CliError::Usage(format!(
                    "oracle definedness mismatch: {other:?}"
                )))
            }
        }
        verified += 1;
    }
    Ok(max_dev)
}

fn random_micro_instance(rng: &mut ChaCha8Rng) -> (Vec<DetRecord>, Vec<GtRecord>) {
    use adaptdet_core::geometry::BoxXYXY;
    let bx = |x1: f64, y1: f64, x2: f64, y2: f64| BoxXYXY::new(x1, y1, x2, y2).unwrap();
    let n_gt = rng.random_range(0..=4);
    let n_det = rng.random_range(0..=8);
    let mut gts = Vec::new();
    for _ in 0..n_gt {
        let x1 = rng.random_range(0.0..60.0);
        let y1 = rng.random_range(0.0..60.0);
        let w = rng.random_range(8.0..40.0);
        let h = rng.random_range(8.0..40.0);
        gts.push(GtRecord { image: rng.random_range(0..2), bbox: bx(x1, y1, x1 + w, y1 + h) });
    }
    let mut dets = Vec::new();
    for _ in 0..n_det {
        let bbox = if !gts.is_empty() && rng.random_bool(0.7) {
            let base = gts[rng.random_range(0..gts.len())].bbox;
            let dx = rng.random_range(-6.0..6.0);
            let dy = rng.random_range(-6.0..6.0);
            bx(base.x1 + dx, base.y1 + dy, base.x2 + dx, base.y2 + dy)
        } else {
            let x1 = rng.random_range(0.0..60.0);
            let y1 = rng.random_range(0.0..60.0);
            bx(x1, y1, x1 + rng.random_range(8.0..40.0), y1 + rng.random_range(8.0..40.0))
        };
        dets.push(DetRecord {
            image: rng.random_range(0..2),
            score: rng.random_range(0.01..1.0),
            bbox,
        });
    }
    (dets, gts)
}
