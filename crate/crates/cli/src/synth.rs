//! `adaptdet synth`: render the four dataset splits to disk.

use crate::config::RunConfig;
use crate::error::CliError;
use adaptdet_core::data::{save_dataset, synthesize, Domain, SynthConfig};

/// Split seeds are offset from the configured render seed so the four
/// splits draw disjoint scene streams.
const SPLIT_SEED_OFFSETS: [u64; 4] = [0, 1, 2, 3];

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.synth.n_train == 0 || cfg.synth.n_eval == 0 {
        return Err(CliError::Usage(
            "refusing to synthesize empty splits: synth.n_train and synth.n_eval must be positive"
                .into(),
        ));
    }
    cfg.write_effective(&cfg.data.root)?;

    let splits: [(&str, usize, Domain); 4] = [
        (&cfg.data.source_train, cfg.synth.n_train, Domain::Source),
        (&cfg.data.target_train, cfg.synth.n_train, Domain::Target),
        (&cfg.data.source_eval, cfg.synth.n_eval, Domain::Source),
        (&cfg.data.target_eval, cfg.synth.n_eval, Domain::Target),
    ];
    for ((name, n, domain), offset) in splits.into_iter().zip(SPLIT_SEED_OFFSETS) {
        let render = SynthConfig {
            seed: cfg.synth.render.seed + offset,
            ..cfg.synth.render.clone()
        };
        let images = synthesize(&render, n, domain);
        let dir = cfg.data.split_dir(name);
        save_dataset(&images, &dir, &cfg.data.annotations)?;
        println!("{name}: {n} images -> {}", dir.display());
    }
    Ok(())
}
