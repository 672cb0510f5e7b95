//! `adaptdet ablate`: train and evaluate the fusion/discriminator switch
//! matrix, emitting one report row per variant.

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{eval, train};
use adaptdet_core::config::FusionMode;
use serde::Serialize;

#[derive(Serialize)]
pub struct VariantRow {
    pub variant: String,
    pub map: f64,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

type Mutator = fn(&mut RunConfig);

/// The switch matrix, in report order.
const VARIANTS: [(&str, Mutator); 6] = [
    ("full", |_| {}),
    ("source_only", |c| c.train.alpha = 0.0),
    ("no_category", |c| c.train.disable_category = true),
    ("no_gated_fusion", |c| c.model.fusion = FusionMode::Off),
    ("average_fusion", |c| c.model.fusion = FusionMode::Average),
    ("conv_fusion", |c| c.model.fusion = FusionMode::Conv1x1),
];

pub fn run(cfg: &RunConfig, chosen: &[String]) -> Result<(), CliError> {
    let selected: Vec<&(&str, Mutator)> = if chosen.is_empty() {
        VARIANTS.iter().collect()
    } else {
        chosen
            .iter()
            .map(|name| {
                VARIANTS
                    .iter()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| {
                        let known: Vec<&str> = VARIANTS.iter().map(|(n, _)| *n).collect();
                        CliError::Usage(format!("unknown variant {name:?}; known: {known:?}"))
                    })
            })
            .collect::<Result<_, _>>()?
    };

    let out = cfg.resolved_output();
    cfg.write_effective(&out)?;

    let mut rows = Vec::new();
    for (name, mutate) in selected {
        println!("== variant {name} ==");
        let mut vcfg = cfg.clone();
        mutate(&mut vcfg);
        vcfg.output = cfg.output.join(name);
        let ckpt = train::run(&vcfg)?;
        let report = eval::run(&vcfg, &ckpt, false, false)?;
        rows.push(VariantRow {
            variant: name.to_string(),
            map: report.map,
            ap_small: report.ap_small,
            ap_medium: report.ap_medium,
            ap_large: report.ap_large,
        });
    }

    let report_path = out.join("ablation_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&rows)? + "\n")
        .map_err(|e| CliError::Io(format!("write {}", report_path.display()), e))?;

    let cell = |v: Option<f64>| match v {
        Some(x) => format!("{x:>7.4}"),
        None => "    n/a".into(),
    };
    println!("\n{:<18} {:>7} {:>7} {:>7} {:>7}", "variant", "mAP", "AP^S", "AP^M", "AP^L");
    for row in &rows {
        println!(
            "{:<18} {:>7.4} {} {} {}",
            row.variant,
            row.map,
            cell(row.ap_small),
            cell(row.ap_medium),
            cell(row.ap_large)
        );
    }
    println!("\nreport: {}", report_path.display());
    Ok(())
}
