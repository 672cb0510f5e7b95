//! `adaptdet train`: run both stages, streaming metrics to JSONL, writing
//! periodic and final checkpoints, and rendering loss curves.

use crate::config::RunConfig;
use crate::error::CliError;
use crate::plot::{self, Series, PALETTE};
use adaptdet_core::checkpoint;
use adaptdet_core::data::load_dataset;
use adaptdet_core::training::{MetricsRecord, Trainer};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

/// Train per the config and return the final checkpoint path.
pub fn run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.resolved_output();
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)
        .map_err(|e| CliError::Io(format!("create {}", ckpt_dir.display()), e))?;
    cfg.write_effective(&out)?;

    let source = load_dataset(
        &cfg.data.split_dir(&cfg.data.source_train),
        &cfg.data.annotations,
        cfg.model.num_categories,
    )?;
    let target = load_dataset(
        &cfg.data.split_dir(&cfg.data.target_train),
        &cfg.data.annotations,
        cfg.model.num_categories,
    )?;
    println!(
        "training on {} source / {} target images for {} iterations",
        source.len(),
        target.len(),
        cfg.train.total_iters()
    );

    let mut trainer = Trainer::new(&cfg.model, &cfg.train)?;
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(
        File::create(&metrics_path)
            .map_err(|e| CliError::Io(format!("create {}", metrics_path.display()), e))?,
    );
    let every = cfg.checkpoint_every;
    let total = cfg.train.total_iters();
    let log = trainer.run(&source, &target, |t, rec| -> Result<(), CliError> {
        serde_json::to_writer(&mut metrics, rec)?;
        metrics
            .write_all(b"\n")
            .map_err(|e| CliError::Io("write metrics".into(), e))?;
        if every > 0 && rec.iteration % every == 0 && rec.iteration < total {
            let path = ckpt_dir.join(format!("iter_{:06}.ckpt", rec.iteration));
            checkpoint::save(&path, t)?;
        }
        Ok(())
    })?;
    metrics
        .flush()
        .map_err(|e| CliError::Io("flush metrics".into(), e))?;

    let final_path = out.join("final.ckpt");
    checkpoint::save(&final_path, &trainer)?;
    plot::line_chart(&out.join("loss_curves.png"), &loss_series(&log), None)?;

    if let Some(last) = log.last() {
        println!(
            "done: iteration {} stage {} total {:.4} det {:.4} (metrics: {})",
            last.iteration,
            last.stage,
            last.total,
            last.det,
            metrics_path.display()
        );
    }
    println!("final checkpoint: {}", final_path.display());
    Ok(final_path)
}

fn loss_series(log: &[MetricsRecord]) -> Vec<Series> {
    let components: [(&str, fn(&MetricsRecord) -> f64); 6] = [
        ("total", |r| r.total),
        ("det", |r| r.det),
        ("gui", |r| r.gui),
        ("pix", |r| r.pix),
        ("ins", |r| r.ins),
        ("cat", |r| r.cat),
    ];
    components
        .iter()
        .enumerate()
        .map(|(i, (label, pick))| Series {
            label: (*label).into(),
            color: PALETTE[i % PALETTE.len()],
            points: log
                .iter()
                .map(|r| (r.iteration as f64, pick(r)))
                .collect(),
        })
        .collect()
}
