// End to end on a synthetic corpus: write a manifest, store and experiment
// config, run every sampling method under combined training, and print the
// grid. Pass a directory to keep the outputs.
//
// ```text
// cargo run --example full_pipeline -- /tmp/ser-demo
// ```

use std::error::Error;
use std::path::PathBuf;

use ser_toolkit::balancing::SamplingMethod;
use ser_toolkit::pipeline::{run_experiment, synth, ExperimentConfig};
use ser_toolkit::synthetic::SyntheticOptions;

pub fn run_in(dir: PathBuf) -> Result<(), Box<dyn Error>> {
    let opts = SyntheticOptions {
        max_speakers: Some(6),
        datasets: Some(vec!["RAVDESS".into(), "CREMA-D".into(), "TESS".into(), "SAVEE".into()]),
        utterances: (16, 20),
    };
    let written = synth(&dir, 21, 16, 2.5, &opts)?;
    let mut cfg = ExperimentConfig::load(&written.config)?;
    cfg.sampling = SamplingMethod::ALL.to_vec();
    cfg.train.epochs = 10;

    let summary = run_experiment(&cfg, None)?;
    println!("config hash {}", summary.config_hash);
    println!("{} ledger records in {}", summary.records.len(), summary.ledger.display());
    let markdown = summary.grids.iter().find(|p| p.extension().is_some_and(|e| e == "md")).ok_or("no grid")?;
    println!("{}", std::fs::read_to_string(markdown)?);
    Ok(())
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    run_in(dir.path().to_path_buf())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    match std::env::args_os().nth(1) {
        Some(out) => run_in(out.into()),
        None => run(),
    }
}
