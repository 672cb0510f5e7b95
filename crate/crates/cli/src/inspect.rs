//! `adaptdet inspect`: render the fusion gate masks per level and the
//! category-selection mask overlay for one image.

use crate::config::RunConfig;
use crate::error::CliError;
use crate::plot;
use adaptdet_core::autodiff::Graph;
use adaptdet_core::checkpoint;
use adaptdet_core::data::{load_dataset, read_png};
use adaptdet_core::discriminator::{max_category_probability, select_important};
use ndarray::ArrayD;
use std::path::{Path, PathBuf};

pub enum ImageSource {
    File(PathBuf),
    Split { split: String, index: usize },
}

pub fn run(cfg: &RunConfig, ckpt_path: &Path, source: &ImageSource) -> Result<(), CliError> {
    let out = cfg.resolved_output();
    cfg.write_effective(&out)?;

    let trainer = checkpoint::load(ckpt_path)?;
    let pixels: ArrayD<f64> = match source {
        ImageSource::File(path) => read_png(path)?,
        ImageSource::Split { split, index } => {
            let data = load_dataset(
                &cfg.data.split_dir(split),
                &cfg.data.annotations,
                trainer.model.cfg.num_categories,
            )?;
            let img = data.get(*index).ok_or_else(|| {
                CliError::Usage(format!("split {split} has {} images, index {index} is out of range", data.len()))
            })?;
            img.pixels.clone()
        }
    };

    let mut g = Graph::no_grad();
    let pv = trainer.params.bind(&mut g);
    let fwd = trainer.model.forward(&mut g, &pv, &pixels)?;

    let mut any_gate = false;
    for (lv, spec) in fwd.levels.iter().zip(trainer.model.cfg.levels.iter()) {
        let Some(gate) = &lv.gate else { continue };
        any_gate = true;
        let mut sum: Option<ArrayD<f64>> = None;
        for (b, gv) in gate.iter().enumerate() {
            let path = out.join(format!("gate_p{}_branch{}.png", spec.k, b));
            plot::heatmap16(&path, g.value(*gv))?;
            let back = plot::read_heatmap16(&path)?;
            let arr = ArrayD::from_shape_vec(g.value(*gv).raw_dim(), back)
                .expect("heatmap shape preserved");
            sum = Some(match sum {
                Some(acc) => acc + &arr,
                None => arr,
            });
        }
        let sum = sum.expect("six branches");
        let max_dev = sum.iter().map(|&s| (s - 1.0).abs()).fold(0.0, f64::max);
        println!(
            "level p{}: 6 gate heatmaps, quantized per-pixel sum within {max_dev:.2e} of 1",
            spec.k
        );
    }
    if !any_gate {
        println!(
            "fusion mode {:?} has no gate; no heatmaps written",
            trainer.model.cfg.fusion
        );
    }

    // category-selection overlay from this image alone
    let p_maps: Vec<Vec<ArrayD<f64>>> = vec![fwd
        .levels
        .iter()
        .map(|lv| max_category_probability(g.value(lv.det.cls)))
        .collect()];
    let sel = select_important(&p_maps, trainer.tcfg.theta_cat);
    let strides: Vec<usize> = fwd.levels.iter().map(|lv| lv.stride).collect();
    let masks = &sel.masks[0];
    let overlay_path = out.join("selection_overlay.png");
    plot::overlay_mask(&overlay_path, &pixels, |j, i| {
        masks.iter().zip(strides.iter()).any(|(m, s)| {
            let (mj, mi) = (j / s, i / s);
            mj < m.shape()[1] && mi < m.shape()[2] && m[ndarray::IxDyn(&[0, mj, mi])] > 0.5
        })
    })?;
    println!(
        "selection overlay ({} of {} pixels selected): {}",
        sel.count,
        masks.iter().map(|m| m.len()).sum::<usize>(),
        overlay_path.display()
    );
    Ok(())
}
