// Builds the results grid from per-fold ledger records. A dataset's cell is
// the size-weighted accuracy over its five speaker-out test folds.

use std::error::Error;

use ser_toolkit::balancing::SamplingMethod;
use ser_toolkit::metrics::{ExperimentGrid, GridFormat, LedgerRecord, RegimeKind, Scope};
use ser_toolkit::EmotionSetKind;

fn record(dataset: &str, sampling: SamplingMethod, fold: usize, n: usize, correct: usize) -> LedgerRecord {
    LedgerRecord {
        experiment_id: "demo".into(),
        config_hash: "0".repeat(64),
        seed: 0,
        emotion_set: EmotionSetKind::Four,
        regime: RegimeKind::Combined,
        sampling,
        dataset_id: dataset.into(),
        fold_index: fold,
        fold_count: 5,
        scope: Scope::SpeakerOutTest,
        n,
        correct,
        accuracy: correct as f64 / n as f64,
        weighted_accuracy: correct as f64 / n as f64,
    }
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let mut ledger = Vec::new();
    for (sampling, bonus) in [(SamplingMethod::Undersample, 0), (SamplingMethod::Smote, 3)] {
        for fold in 0..5 {
            ledger.push(record("RAVDESS", sampling, fold, 40 + fold, 25 + fold + bonus));
            ledger.push(record("TESS", sampling, fold, 100, 90 + bonus));
        }
    }
    let order = vec!["RAVDESS".to_string(), "TESS".to_string()];
    let mut grid = ExperimentGrid::from_ledger(&ledger, &order)?;
    grid.set_class_count("RAVDESS", EmotionSetKind::Four, 4);
    grid.set_class_count("TESS", EmotionSetKind::Four, 4);

    println!("{}", grid.render(GridFormat::Markdown, Some(&ledger[0].config_hash)));
    let csv = grid.render(GridFormat::Csv, None);
    println!("{csv}");
    assert_eq!(ExperimentGrid::from_csv(&csv)?.render(GridFormat::Csv, None), csv);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
