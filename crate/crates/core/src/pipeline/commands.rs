//! Single-stage entry points, one per subcommand. Each reads its inputs
//! from disk and writes its outputs to disk, so stages can be rerun alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::{build_units, evaluate_fold, project_embeddings, train_fold, unit_of, CellInfo, Corpus, FoldJob};
use super::{
    class_counts, load_manifests, load_stores, load_taxonomy, ExperimentConfig, ModelSettings, PathsConfig,
    PipelineError, PipelineResult, RegimeConfig, TsneSettings,
};
use crate::balancing::{resample, LabeledMatrix, SamplerConfig, SamplingMethod};
use crate::classifier::{self, read_checkpoint, TrainConfig};
use crate::embedding_store::{write_store, EmbeddingStore};
use crate::ingestion::{self, duration_filter, scan_dataset, write_skip_list, AdapterRule, DurationBounds};
use crate::metrics::{read_ledger, write_ledger, ExperimentGrid, GridFormat};
use crate::splits::{audit_plan, SplitPlan, SplitPolicy, Violation};
use crate::synthetic::{synthetic_manifest, synthetic_store, SyntheticOptions};
use crate::taxonomy::{EmotionLabel, EmotionSet, EmotionSetKind};

fn io_err(stage: &str, path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::data(stage, format!("{}: {e}", path.display()))
}

fn ensure_parent(stage: &str, path: &Path) -> PipelineResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| io_err(stage, p, e)),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub manifest: PathBuf,
    pub skip_list: PathBuf,
    pub records: usize,
    pub skipped: usize,
}

/// Walks one dataset root with its adapter (a rule file, or the built-in
/// rule for `dataset_id`) and writes the manifest plus its `.skipped` list.
pub fn scan(root: &Path, dataset_id: &str, adapter: Option<&Path>, manifest_out: &Path) -> PipelineResult<ScanReport> {
    let rule = match adapter {
        Some(p) => AdapterRule::load(p).map_err(|e| PipelineError::config("scan", e))?,
        None => AdapterRule::builtin(dataset_id)
            .ok_or_else(|| PipelineError::config("scan", format!("no built-in adapter for `{dataset_id}`")))?,
    };
    if !root.is_dir() {
        return Err(PipelineError::config("scan", format!("dataset root is not a directory: {}", root.display())));
    }
    let outcome = scan_dataset(root, &rule).map_err(|e| PipelineError::data("scan", e))?;
    ensure_parent("scan", manifest_out)?;
    ingestion::write_manifest(manifest_out, &outcome.records).map_err(|e| PipelineError::data("scan", e))?;
    let skip_list = write_skip_list(manifest_out, &outcome.skipped).map_err(|e| PipelineError::data("scan", e))?;
    log::info!(target: "scan", "{}: {} records, {} skipped", rule.dataset_id, outcome.records.len(), outcome.skipped.len());
    Ok(ScanReport {
        manifest: manifest_out.to_path_buf(),
        skip_list,
        records: outcome.records.len(),
        skipped: outcome.skipped.len(),
    })
}

/// Maps native labels into `set` and writes the kept records, labelled,
/// to `out`. Returns the per-label totals.
pub fn project(
    manifests: &[PathBuf],
    mappings_dir: Option<&Path>,
    set: EmotionSetKind,
    strict: bool,
    out: &Path,
) -> PipelineResult<BTreeMap<EmotionLabel, usize>> {
    let taxonomy = load_taxonomy(mappings_dir, strict)?;
    let records = load_manifests(manifests)?;
    let projected = taxonomy
        .project_manifest(&records, &EmotionSet::of_kind(set))
        .map_err(|e| PipelineError::data("project", e))?;
    ensure_parent("project", out)?;
    ingestion::write_manifest(out, &projected).map_err(|e| PipelineError::data("project", e))?;
    let mut totals = BTreeMap::new();
    for r in &projected {
        *totals.entry(r.unified_label.expect("projected")).or_insert(0) += 1;
    }
    log::info!(target: "project", "{} of {} records kept for the {set} set", projected.len(), records.len());
    Ok(totals)
}

/// Builds and writes `<out_dir>/<unit>.json` for every regime unit. Records
/// are projected to `set` and duration filtered first.
pub fn split(
    manifests: &[PathBuf],
    mappings_dir: Option<&Path>,
    set: EmotionSetKind,
    regime: &RegimeConfig,
    policy: &SplitPolicy,
    bounds: DurationBounds,
    out_dir: &Path,
) -> PipelineResult<Vec<PathBuf>> {
    let taxonomy = load_taxonomy(mappings_dir, false)?;
    let records = duration_filter(&load_manifests(manifests)?, bounds);
    let projected = taxonomy
        .project_manifest(&records, &EmotionSet::of_kind(set))
        .map_err(|e| PipelineError::data("project", e))?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err("split", out_dir, e))?;
    let mut paths = Vec::new();
    for unit in build_units(&projected, regime, policy)? {
        let path = out_dir.join(format!("{}.json", unit.name));
        unit.plan.save(&path).map_err(|e| io_err("split", &path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Re-checks a plan file for leakage and coverage problems.
pub fn audit(plan_path: &Path) -> PipelineResult<Vec<Violation>> {
    let plan = SplitPlan::load(plan_path).map_err(|e| io_err("audit", plan_path, e))?;
    Ok(audit_plan(&plan))
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub before: BTreeMap<EmotionLabel, usize>,
    pub after: BTreeMap<EmotionLabel, usize>,
    pub store: PathBuf,
    pub labels: PathBuf,
}

/// Resamples a labelled store. Labels come from the (projected) manifests;
/// the output store gets a `<store>.labels.csv` sidecar with `id,label`.
pub fn balance(
    manifests: &[PathBuf],
    stores: &[PathBuf],
    mappings_dir: Option<&Path>,
    set: EmotionSetKind,
    sampler: &SamplerConfig,
    out_store: &Path,
) -> PipelineResult<BalanceReport> {
    let taxonomy = load_taxonomy(mappings_dir, false)?;
    let records = load_manifests(manifests)?;
    let pairs = super::joined_pairs(&records, &load_stores(stores)?, &taxonomy, &EmotionSet::of_kind(set))?;
    let data = LabeledMatrix::from_pairs(&pairs).map_err(|e| PipelineError::data("balance", e))?;
    let balanced = resample(&data, sampler).map_err(|e| PipelineError::data("balance", e))?;
    let store = balanced.to_store().map_err(|e| PipelineError::data("balance", e))?;
    ensure_parent("balance", out_store)?;
    write_store(&store, out_store).map_err(|e| io_err("balance", out_store, e))?;
    let labels = PathBuf::from(format!("{}.labels.csv", out_store.display()));
    let mut w = csv::Writer::from_path(&labels).map_err(|e| io_err("balance", &labels, e))?;
    w.write_record(["id", "label"]).map_err(|e| io_err("balance", &labels, e))?;
    for (id, label) in balanced.ids().iter().zip(balanced.labels()) {
        w.write_record([id.as_str(), label.as_str()]).map_err(|e| io_err("balance", &labels, e))?;
    }
    w.flush().map_err(|e| io_err("balance", &labels, e))?;
    Ok(BalanceReport {
        before: data.class_counts(),
        after: balanced.class_counts(),
        store: out_store.to_path_buf(),
        labels,
    })
}

fn load_for_fold(cfg: &ExperimentConfig, plan_path: &Path, sampling: SamplingMethod) -> PipelineResult<(Corpus, SplitPlan, CellInfo)> {
    cfg.validate()?;
    let plan = SplitPlan::load(plan_path).map_err(|e| io_err("split", plan_path, e))?;
    let corpus = Corpus::load(
        &cfg.paths.manifests,
        &cfg.paths.stores,
        cfg.paths.mappings_dir.as_deref(),
        cfg.emotion_set,
        cfg.duration,
    )?;
    let (unit, regime) = unit_of(&plan);
    let cell = CellInfo {
        experiment_id: cfg.experiment_id.clone(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        emotion_set: cfg.emotion_set,
        regime,
        unit,
        sampling,
    };
    Ok((corpus, plan, cell))
}

fn fold_paths(cfg: &ExperimentConfig, cell: &CellInfo, fold: usize) -> (PathBuf, PathBuf) {
    let out = &cfg.paths.output_dir;
    (
        out.join("checkpoints").join(cell.name()).join(format!("fold{fold}.sermlp")),
        out.join("curves").join(cell.name()).join(format!("fold{fold}.csv")),
    )
}

/// Trains one fold of a plan and writes its checkpoint and loss curve to
/// the same paths `run` uses. Returns the checkpoint path.
pub fn train_one_fold(cfg: &ExperimentConfig, plan_path: &Path, sampling: SamplingMethod, fold: usize) -> PipelineResult<PathBuf> {
    let (corpus, plan, cell) = load_for_fold(cfg, plan_path, sampling)?;
    let outcome = train_fold(&FoldJob {
        corpus: &corpus,
        plan: &plan,
        fold,
        cell: &cell,
        sampler: cfg.sampler,
        train: &cfg.train,
        hidden_divisor: cfg.model.hidden_divisor,
    })?;
    let (ckpt, curve) = fold_paths(cfg, &cell, fold);
    ensure_parent("train", &ckpt)?;
    ensure_parent("train", &curve)?;
    classifier::write_checkpoint(&outcome.model, &ckpt).map_err(|e| io_err("train", &ckpt, e))?;
    classifier::write_loss_curve(&curve, &outcome.curve).map_err(|e| io_err("train", &curve, e))?;
    Ok(ckpt)
}

/// Scores a fold checkpoint (the `train` output unless `checkpoint` is
/// given) and writes its ledger records to
/// `<output_dir>/ledger/<unit>-<sampling>-fold<k>.jsonl`.
pub fn eval_one_fold(
    cfg: &ExperimentConfig,
    plan_path: &Path,
    sampling: SamplingMethod,
    fold: usize,
    checkpoint: Option<&Path>,
) -> PipelineResult<PathBuf> {
    let (corpus, plan, cell) = load_for_fold(cfg, plan_path, sampling)?;
    let default_ckpt = fold_paths(cfg, &cell, fold).0;
    let ckpt = checkpoint.unwrap_or(&default_ckpt);
    let model = read_checkpoint(ckpt).map_err(|e| io_err("eval", ckpt, e))?;
    if model.input_dim() != corpus.dim || model.num_classes() != corpus.classes.len() {
        return Err(PipelineError::config(
            "eval",
            format!(
                "checkpoint maps {} -> {} but the data has dimension {} and {} classes",
                model.input_dim(),
                model.num_classes(),
                corpus.dim,
                corpus.classes.len()
            ),
        ));
    }
    let records = evaluate_fold(&corpus, &plan, fold, &model, &cell)?;
    let path = cfg.paths.output_dir.join("ledger").join(format!("{}-fold{fold}.jsonl", cell.name()));
    ensure_parent("eval", &path)?;
    write_ledger(&path, &records).map_err(|e| io_err("eval", &path, e))?;
    Ok(path)
}

/// Renders the grid for one or more ledgers. With manifests, the
/// per-dataset class count columns are filled in too.
pub fn report(
    ledgers: &[PathBuf],
    format: GridFormat,
    manifests: &[PathBuf],
    mappings_dir: Option<&Path>,
) -> PipelineResult<String> {
    let mut records = Vec::new();
    for p in ledgers {
        records.extend(read_ledger(p).map_err(|e| io_err("report", p, e))?);
    }
    let mut order: Vec<String> = Vec::new();
    for r in &records {
        if !order.contains(&r.dataset_id) {
            order.push(r.dataset_id.clone());
        }
    }
    let mut grid = ExperimentGrid::from_ledger(&records, &order).map_err(|e| PipelineError::data("report", e))?;
    if !manifests.is_empty() {
        let taxonomy = load_taxonomy(mappings_dir, false)?;
        let all = load_manifests(manifests)?;
        let sets: std::collections::BTreeSet<EmotionSetKind> = records.iter().map(|r| r.emotion_set).collect();
        for set in sets {
            let projected = taxonomy
                .project_manifest(&all, &EmotionSet::of_kind(set))
                .map_err(|e| PipelineError::data("project", e))?;
            for (dataset, n) in class_counts(&projected) {
                grid.set_class_count(&dataset, set, n);
            }
        }
    }
    let hashes: std::collections::BTreeSet<&str> = records.iter().map(|r| r.config_hash.as_str()).collect();
    let hash = (hashes.len() == 1).then(|| *hashes.iter().next().expect("one hash"));
    Ok(grid.render(format, hash))
}

/// Projects the embeddings of `set` to 2-D and writes `points.csv` and
/// `points.svg` into `out_dir`.
pub fn tsne(
    manifests: &[PathBuf],
    stores: &[PathBuf],
    mappings_dir: Option<&Path>,
    set: EmotionSetKind,
    settings: &TsneSettings,
    seed: u64,
    out_dir: &Path,
) -> PipelineResult<Vec<PathBuf>> {
    let corpus = Corpus::load(manifests, stores, mappings_dir, set, DurationBounds::default())?;
    project_embeddings(&corpus, settings, seed, out_dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthOutputs {
    pub manifest: PathBuf,
    pub store: PathBuf,
    pub config: PathBuf,
}

/// Writes a synthetic corpus (`manifest.jsonl`, `embeddings.bin`) and a
/// small ready-to-run `experiment.json` into `out_dir`.
pub fn synth(out_dir: &Path, seed: u64, dim: usize, separation: f64, opts: &SyntheticOptions) -> PipelineResult<SynthOutputs> {
    if dim == 0 {
        return Err(PipelineError::config("synth", "dimension must be positive"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err("synth", out_dir, e))?;
    let records = synthetic_manifest(seed, opts);
    let store: EmbeddingStore = synthetic_store(&records, dim, separation, seed);
    let manifest = out_dir.join("manifest.jsonl");
    ingestion::write_manifest(&manifest, &records).map_err(|e| PipelineError::data("synth", e))?;
    let store_path = out_dir.join("embeddings.bin");
    write_store(&store, &store_path).map_err(|e| io_err("synth", &store_path, e))?;
    let cfg = ExperimentConfig {
        experiment_id: "synthetic".into(),
        emotion_set: EmotionSetKind::Four,
        regime: RegimeConfig::Combined,
        sampling: vec![SamplingMethod::Undersample],
        seed,
        paths: PathsConfig {
            manifests: vec!["manifest.jsonl".into()],
            stores: vec!["embeddings.bin".into()],
            output_dir: "results".into(),
            mappings_dir: None,
        },
        train: TrainConfig {
            learning_rate: 1e-3,
            epochs: 15,
            ..TrainConfig::default()
        },
        split: SplitPolicy::with_seed(seed),
        sampler: Default::default(),
        model: ModelSettings { hidden_divisor: 64 },
        duration: DurationBounds::default(),
        tsne: None,
    };
    let config = out_dir.join("experiment.json");
    std::fs::write(&config, cfg.to_json() + "\n").map_err(|e| io_err("synth", &config, e))?;
    Ok(SynthOutputs {
        manifest,
        store: store_path,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{run_experiment, ErrorKind};

    fn small(dir: &Path) -> ExperimentConfig {
        let opts = SyntheticOptions {
            max_speakers: Some(3),
            datasets: Some(vec!["RAVDESS".into(), "TESS".into(), "SAVEE".into()]),
            utterances: (10, 12),
        };
        let out = synth(dir, 5, 16, 3.0, &opts).unwrap();
        let mut cfg = ExperimentConfig::load(&out.config).unwrap();
        cfg.train.epochs = 4;
        cfg
    }

    #[test]
    fn stages_reproduce_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let summary = run_experiment(&cfg, Some(2)).unwrap();
        assert!(!cfg.paths.output_dir.join(super::super::INCOMPLETE_MARKER).exists());

        let plan = &summary.plans[0];
        assert!(audit(plan).unwrap().is_empty());
        let mut staged = cfg.clone();
        staged.paths.output_dir = dir.path().join("staged");
        let ckpt = train_one_fold(&staged, plan, SamplingMethod::Undersample, 2).unwrap();
        let run_ckpt = &summary.checkpoints[2];
        assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(run_ckpt).unwrap());
        let ledger = eval_one_fold(&staged, plan, SamplingMethod::Undersample, 2, None).unwrap();
        let staged_records = read_ledger(&ledger).unwrap();
        let run_records: Vec<_> = summary.records.iter().filter(|r| r.fold_index == 2).cloned().collect();
        assert_eq!(staged_records, run_records);

        let md = report(&[summary.ledger.clone()], GridFormat::Markdown, &cfg.paths.manifests, None).unwrap();
        assert!(md.contains(&summary.config_hash));
        let written = std::fs::read_to_string(&summary.grids[0]).unwrap();
        assert!(written.starts_with(&md));
    }

    #[test]
    fn split_and_balance_write_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let plans = split(
            &cfg.paths.manifests,
            None,
            EmotionSetKind::Four,
            &RegimeConfig::Separate(vec![]),
            &cfg.split,
            DurationBounds::default(),
            &dir.path().join("plans"),
        )
        .unwrap();
        assert_eq!(plans.len(), 3);
        let report = balance(
            &cfg.paths.manifests,
            &cfg.paths.stores,
            None,
            EmotionSetKind::Four,
            &SamplerConfig::with_method(SamplingMethod::Smote, 1),
            &dir.path().join("bal.bin"),
        )
        .unwrap();
        let max = *report.before.values().max().unwrap();
        assert!(report.after.values().all(|&n| n == max));
        let labels = std::fs::read_to_string(&report.labels).unwrap();
        assert_eq!(labels.lines().count(), 1 + report.after.values().sum::<usize>());
    }

    #[test]
    fn missing_store_is_a_config_error_and_marks_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.paths.stores = vec![dir.path().join("absent.bin")];
        let err = run_experiment(&cfg, None).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Config);
        assert!(!cfg.paths.output_dir.join("ledger.jsonl").exists());
    }

    #[test]
    fn unknown_separate_dataset_fails_and_leaves_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.regime = RegimeConfig::Separate(vec!["IEMOCAP".into()]);
        let err = run_experiment(&cfg, None).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Config);
        assert!(cfg.paths.output_dir.join(super::super::INCOMPLETE_MARKER).exists());
        let record = std::fs::read_to_string(cfg.paths.output_dir.join("error.json")).unwrap();
        assert!(record.contains("IEMOCAP"));
    }
}
