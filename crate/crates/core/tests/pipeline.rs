use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use ser_toolkit::metrics::{read_ledger, Scope};
use ser_toolkit::pipeline::{audit, synth};
use ser_toolkit::pipeline::{run_experiment, ErrorKind, ExperimentConfig};
use ser_toolkit::splits::SplitPlan;
use ser_toolkit::synthetic::{dataset_order, SyntheticOptions};

fn fixture(dir: &Path) -> ExperimentConfig {
    let opts = SyntheticOptions {
        utterances: (20, 24),
        max_speakers: Some(7),
        datasets: None,
    };
    let out = synth(dir, 11, 16, 3.0, &opts).unwrap();
    let mut cfg = ExperimentConfig::load(&out.config).unwrap();
    cfg.train.epochs = 3;
    cfg
}

fn ser(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ser"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn combined_run_scores_every_dataset_on_every_fold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let summary = run_experiment(&cfg, Some(1)).unwrap();

    let records = read_ledger(&summary.ledger).unwrap();
    let mut folds: BTreeMap<(String, Scope), Vec<usize>> = BTreeMap::new();
    for r in &records {
        assert_eq!(r.config_hash, summary.config_hash);
        assert_eq!(r.fold_count, 5);
        folds.entry((r.dataset_id.clone(), r.scope)).or_default().push(r.fold_index);
    }
    for dataset in dataset_order() {
        for scope in [Scope::Validation, Scope::SpeakerOutTest] {
            let mut seen = folds.remove(&(dataset.clone(), scope)).unwrap_or_default();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 1, 2, 3, 4], "{dataset} {scope:?}");
        }
    }
    for ((dataset, scope), mut seen) in folds {
        assert_eq!(scope, Scope::ExtraTest, "{dataset}");
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4], "{dataset}");
    }

    let csv = std::fs::read_to_string(summary.grids.iter().find(|p| p.extension().unwrap() == "csv").unwrap()).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows[11].starts_with("Mean,"));
    for (row, dataset) in rows.iter().zip(dataset_order()) {
        assert!(row.starts_with(&format!("{dataset},")), "{row}");
        let ds: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=100.0).contains(&ds), "{row}");
    }
}

#[test]
fn missing_store_stops_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let mut broken = cfg.clone();
    broken.paths.stores = vec![dir.path().join("nope.bin")];
    assert_eq!(run_experiment(&broken, None).unwrap_err().kind, ErrorKind::Config);
    assert!(!cfg.paths.output_dir.join("checkpoints").exists());

    let config = dir.path().join("experiment.json");
    let missing = dir.path().join("nope.bin");
    let out = ser(&["run", "--config", config.to_str().unwrap(), "--store", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("nope.bin"), "{stderr}");
}

fn first_plan(dir: &Path) -> PathBuf {
    let config = dir.join("experiment.json");
    let out = ser(&["split", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let plan_dir = dir.join("results").join("plans");
    let mut plans: Vec<PathBuf> = std::fs::read_dir(&plan_dir).unwrap().map(|e| e.unwrap().path()).collect();
    plans.sort();
    plans.remove(0)
}

#[test]
fn audit_flags_exactly_the_planted_leak() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let plan_path = first_plan(dir.path());
    assert!(audit(&plan_path).unwrap().is_empty());
    assert_eq!(ser(&["audit", plan_path.to_str().unwrap()]).status.code(), Some(0));

    let mut plan = SplitPlan::from_json(&std::fs::read_to_string(&plan_path).unwrap()).unwrap();
    let leaked = plan.test_ids[0].clone();
    plan.folds[0].train.push(leaked.clone());
    plan.folds[0].train.sort();
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, plan.to_json()).unwrap();
    let violations = audit(&tampered).unwrap();
    assert_eq!(violations.len(), 1, "{violations:?}");
    assert_eq!(violations[0].id, leaked);
    assert_eq!(violations[0].fold, Some(0));
    let out = ser(&["audit", tampered.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains(&leaked));

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(audit(&empty).unwrap_err().kind, ErrorKind::Data);
    assert_eq!(ser(&["audit", empty.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn binary_keeps_stdout_for_reports() {
    let dir = tempfile::tempdir().unwrap();
    let opts = SyntheticOptions {
        utterances: (8, 10),
        max_speakers: Some(3),
        datasets: Some(vec!["RAVDESS".into(), "SAVEE".into()]),
    };
    let made = synth(dir.path(), 2, 8, 3.0, &opts).unwrap();
    let config = made.config.to_str().unwrap();
    let run = ser(&["run", "--config", config, "--epochs", "2", "--jobs", "1"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(run.stdout.is_empty());

    let ledger = dir.path().join("results").join("ledger.jsonl");
    let manifest = made.manifest.to_str().unwrap();
    let report = ser(&["report", "--ledger", ledger.to_str().unwrap(), "--format", "csv", "--manifest", manifest]);
    assert_eq!(report.status.code(), Some(0));
    let csv = String::from_utf8(report.stdout).unwrap();
    assert!(csv.starts_with("Dataset,"), "{csv}");
    assert_eq!(csv.lines().count(), 4);

    assert_eq!(ser(&["run"]).status.code(), Some(2));
    assert_eq!(ser(&["frobnicate"]).status.code(), Some(2));
}
