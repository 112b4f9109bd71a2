//! The full experiment: project, join, split, then per cell and fold
//! balance, train and evaluate, and finally write the ledger and grid.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    class_counts, dataset_order, joined_pairs, load_manifests, load_stores, load_taxonomy, ExperimentConfig,
    PipelineError, PipelineResult, RegimeConfig, SamplerSettings, TsneSettings,
};
use crate::balancing::{resample, LabeledMatrix, SamplerConfig, SamplingMethod};
use crate::classifier::{self, hidden_widths, layer_dims, LabeledRows, Mlp, TrainConfig, TrainOutcome};
use crate::ingestion::{duration_filter, DurationBounds, UtteranceRecord};
use crate::metrics::{
    checked_accuracy, weighted_accuracy, write_ledger, ExperimentGrid, FoldResult, GridFormat, LedgerRecord,
    Prediction, RegimeKind, Scope,
};
use crate::rng;
use crate::splits::{audit_plan, plan_combined, plan_separate, Regime, SplitError, SplitPlan, SplitPolicy};
use crate::taxonomy::{EmotionLabel, EmotionSet, EmotionSetKind};
use crate::tsne::{self, ProjectedPoint};

/// Present in the output directory while a run is unfinished or failed.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Projected manifest records joined with their embeddings.
pub(crate) struct Corpus {
    pub pairs: Vec<(UtteranceRecord, Vec<f32>)>,
    index: HashMap<String, usize>,
    pub classes: Vec<EmotionLabel>,
    class_index: HashMap<EmotionLabel, usize>,
    pub dim: usize,
}

impl Corpus {
    pub fn load(
        manifests: &[PathBuf],
        stores: &[PathBuf],
        mappings_dir: Option<&Path>,
        set: EmotionSetKind,
        bounds: DurationBounds,
    ) -> PipelineResult<Self> {
        let taxonomy = load_taxonomy(mappings_dir, false)?;
        let records = duration_filter(&load_manifests(manifests)?, bounds);
        let stores = load_stores(stores)?;
        let set = EmotionSet::of_kind(set);
        let pairs = joined_pairs(&records, &stores, &taxonomy, &set)?;
        if pairs.is_empty() {
            return Err(PipelineError::data("join", "no labelled utterances with embeddings remain"));
        }
        let classes: Vec<EmotionLabel> = set.labels().iter().copied().collect();
        Ok(Corpus {
            dim: pairs[0].1.len(),
            index: pairs.iter().enumerate().map(|(i, (r, _))| (r.id.clone(), i)).collect(),
            class_index: classes.iter().enumerate().map(|(i, l)| (*l, i)).collect(),
            classes,
            pairs,
        })
    }

    pub fn records(&self) -> Vec<UtteranceRecord> {
        self.pairs.iter().map(|(r, _)| r.clone()).collect()
    }

    fn lookup(&self, id: &str) -> PipelineResult<&(UtteranceRecord, Vec<f32>)> {
        self.index
            .get(id)
            .map(|&i| &self.pairs[i])
            .ok_or_else(|| PipelineError::data("split", format!("plan id `{id}` has no labelled embedding")))
    }

    fn labeled(&self, ids: &[String]) -> PipelineResult<LabeledMatrix> {
        let mut m = LabeledMatrix::new(self.dim);
        for id in ids {
            let (r, v) = self.lookup(id)?;
            let row: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
            m.push(id.clone(), r.unified_label.expect("projected records are labelled"), &row);
        }
        Ok(m)
    }

    fn rows_of(&self, m: &LabeledMatrix) -> (Array2<f32>, Vec<usize>) {
        let x = Array2::from_shape_fn((m.len(), self.dim), |(i, j)| m.row(i)[j] as f32);
        let y = m.labels().iter().map(|l| self.class_index[l]).collect();
        (x, y)
    }
}

/// What a trained fold belongs to, for ledger records and file names.
#[derive(Debug, Clone)]
pub(crate) struct CellInfo {
    pub experiment_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub emotion_set: EmotionSetKind,
    pub regime: RegimeKind,
    pub unit: String,
    pub sampling: SamplingMethod,
}

impl CellInfo {
    pub fn name(&self) -> String {
        format!("{}-{}", self.unit, self.sampling.as_str())
    }
}

pub(crate) struct FoldJob<'a> {
    pub corpus: &'a Corpus,
    pub plan: &'a SplitPlan,
    pub fold: usize,
    pub cell: &'a CellInfo,
    pub sampler: SamplerSettings,
    pub train: &'a TrainConfig,
    pub hidden_divisor: usize,
}

/// Balances the fold's training rows, then trains from a seeded init with
/// the fold's validation rows driving early stopping.
pub(crate) fn train_fold(job: &FoldJob<'_>) -> PipelineResult<TrainOutcome<f32>> {
    let fold = job
        .plan
        .folds
        .get(job.fold)
        .ok_or_else(|| PipelineError::config("train", format!("plan has no fold {}", job.fold)))?;
    let name = job.cell.name();
    let fold_tag = job.fold.to_string();
    let stream = [job.cell.unit.as_str(), job.cell.sampling.as_str(), fold_tag.as_str()];
    let sampler = SamplerConfig {
        method: job.cell.sampling,
        k_neighbors: job.sampler.k_neighbors,
        beta: job.sampler.beta,
        seed: rng::child_seed(job.cell.seed, &[&["balance"][..], &stream].concat()),
    };
    let train_rows = resample(&job.corpus.labeled(&fold.train)?, &sampler)
        .map_err(|e| PipelineError::data("balance", format!("{name} fold {}: {e}", job.fold)))?;
    let (x, y) = job.corpus.rows_of(&train_rows);
    let (vx, vy) = job.corpus.rows_of(&job.corpus.labeled(&fold.validation)?);
    let cfg = TrainConfig {
        seed: rng::child_seed(job.cell.seed, &[&["train"][..], &stream].concat()),
        ..job.train.clone()
    };
    let dims = layer_dims(job.corpus.dim, &hidden_widths(job.hidden_divisor), job.corpus.classes.len());
    let model = Mlp::<f32>::new(&dims, cfg.seed).map_err(|e| PipelineError::config("train", e))?;
    log::info!(
        target: "train",
        "{name} fold {}: {} training rows after {} ({} before), {} validation rows",
        job.fold,
        train_rows.len(),
        job.cell.sampling,
        fold.train.len(),
        fold.validation.len()
    );
    classifier::train(model, LabeledRows::new(x.view(), &y), Some(LabeledRows::new(vx.view(), &vy)), &cfg)
        .map_err(|e| PipelineError::training("train", format!("{name} fold {}: {e}", job.fold)))
}

/// Ledger records for one trained fold: validation, speaker-out test and
/// extra test pool, each split by dataset.
pub(crate) fn evaluate_fold(
    corpus: &Corpus,
    plan: &SplitPlan,
    fold: usize,
    model: &Mlp<f32>,
    cell: &CellInfo,
) -> PipelineResult<Vec<LedgerRecord>> {
    let folds = &plan.folds;
    let validation = &folds
        .get(fold)
        .ok_or_else(|| PipelineError::config("eval", format!("plan has no fold {fold}")))?
        .validation;
    let datasets = dataset_order(&corpus.records());
    let mut out = Vec::new();
    for (scope, ids) in [
        (Scope::Validation, validation),
        (Scope::SpeakerOutTest, &plan.test_ids),
        (Scope::ExtraTest, &plan.extra_test_pool),
    ] {
        if ids.is_empty() {
            continue;
        }
        let m = corpus.labeled(ids)?;
        let (x, _) = corpus.rows_of(&m);
        let predicted = model.predict(x.view()).map_err(|e| PipelineError::training("eval", e))?;
        let mut by_dataset: HashMap<&str, Vec<Prediction>> = HashMap::new();
        for (i, id) in m.ids().iter().enumerate() {
            let dataset = corpus.lookup(id)?.0.dataset_id.as_str();
            by_dataset.entry(dataset).or_default().push(Prediction {
                id: id.clone(),
                predicted: corpus.classes[predicted[i]],
                truth: m.label(i),
            });
        }
        for dataset in &datasets {
            let Some(predictions) = by_dataset.remove(dataset.as_str()) else { continue };
            let result = FoldResult {
                dataset_id: dataset.clone(),
                fold_index: fold,
                scope,
                predictions,
            };
            let accuracy = checked_accuracy(&result).map_err(|e| PipelineError::training("eval", e))?;
            out.push(LedgerRecord {
                experiment_id: cell.experiment_id.clone(),
                config_hash: cell.config_hash.clone(),
                seed: cell.seed,
                emotion_set: cell.emotion_set,
                regime: cell.regime,
                sampling: cell.sampling,
                dataset_id: dataset.clone(),
                fold_index: fold,
                fold_count: folds.len(),
                scope,
                n: result.predictions.len(),
                correct: result.correct(),
                accuracy,
                weighted_accuracy: weighted_accuracy(&result).map_err(|e| PipelineError::training("eval", e))?,
            });
        }
    }
    Ok(out)
}

fn io_err(stage: &str, path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::data(stage, format!("{}: {e}", path.display()))
}

fn write_file(stage: &str, path: &Path, contents: impl AsRef<[u8]>) -> PipelineResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(stage, parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(stage, path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub experiment_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: &'static str,
    pub ledger: PathBuf,
    pub plans: Vec<PathBuf>,
    pub grids: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub tsne: Vec<PathBuf>,
    #[serde(skip)]
    pub records: Vec<LedgerRecord>,
    #[serde(skip)]
    pub grid: ExperimentGrid,
}

/// One trained model's worth of data: the combined pool or one dataset.
pub(crate) struct Unit {
    pub name: String,
    pub regime: RegimeKind,
    pub plan: SplitPlan,
}

pub(crate) fn unit_of(plan: &SplitPlan) -> (String, RegimeKind) {
    match &plan.regime {
        Regime::Combined => ("combined".into(), RegimeKind::Combined),
        Regime::Separate(d) => (d.clone(), RegimeKind::Separate),
    }
}

pub(crate) fn build_units(records: &[UtteranceRecord], regime: &RegimeConfig, policy: &SplitPolicy) -> PipelineResult<Vec<Unit>> {
    let split_err = |e: SplitError| match e {
        SplitError::InvalidPolicy(_) => PipelineError::config("split", e),
        other => PipelineError::data("split", other),
    };
    let plans = match regime {
        RegimeConfig::Combined => vec![plan_combined(records, policy).map_err(split_err)?],
        RegimeConfig::Separate(list) => {
            let datasets = dataset_order(records);
            let chosen = if list.is_empty() { datasets.clone() } else { list.clone() };
            chosen
                .iter()
                .map(|d| {
                    if !datasets.contains(d) {
                        return Err(PipelineError::config("split", format!("dataset `{d}` has no usable utterances")));
                    }
                    plan_separate(records, d, policy).map_err(split_err)
                })
                .collect::<PipelineResult<_>>()?
        }
    };
    Ok(plans
        .into_iter()
        .map(|plan| {
            let (name, regime) = unit_of(&plan);
            Unit { name, regime, plan }
        })
        .collect())
}

/// Runs every (sampling, regime unit) cell of `cfg`. Cells run on up to
/// `jobs` threads (all cores when `None`); outputs do not depend on it.
///
/// While running, `INCOMPLETE` marks the output directory. On failure it
/// stays, and `error.json` holds the error record.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> PipelineResult<RunSummary> {
    cfg.validate()?;
    let out = &cfg.paths.output_dir;
    let marker = out.join(INCOMPLETE_MARKER);
    write_file("run", &marker, format!("{}\n", cfg.config_hash()))
        .map_err(|e| PipelineError::config("run", e.message))?;
    let _ = std::fs::remove_file(out.join("error.json"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::config("run", e))?;
    match pool.install(|| execute(cfg)) {
        Ok(summary) => {
            std::fs::remove_file(&marker).map_err(|e| io_err("run", &marker, e))?;
            Ok(summary)
        }
        Err(e) => {
            log::error!(target: "run", "{e}");
            let _ = std::fs::write(out.join("error.json"), e.to_record() + "\n");
            Err(e)
        }
    }
}

fn execute(cfg: &ExperimentConfig) -> PipelineResult<RunSummary> {
    let out = &cfg.paths.output_dir;
    let hash = cfg.config_hash();
    let corpus = Corpus::load(
        &cfg.paths.manifests,
        &cfg.paths.stores,
        cfg.paths.mappings_dir.as_deref(),
        cfg.emotion_set,
        cfg.duration,
    )?;
    let records = corpus.records();
    let datasets = dataset_order(&records);
    log::info!(target: "run", "{} utterances from {} datasets, {} classes", records.len(), datasets.len(), corpus.classes.len());

    let policy = crate::splits::SplitPolicy {
        seed: cfg.seed,
        ..cfg.split.clone()
    };
    let mut units = build_units(&records, &cfg.regime, &policy)?;

    let mut plans = Vec::new();
    for unit in &mut units {
        unit.plan.config_hash = Some(hash.clone());
        let violations = audit_plan(&unit.plan);
        if let Some(v) = violations.first() {
            return Err(PipelineError::data("split", format!("plan {} failed audit: {v:?}", unit.name)));
        }
        let path = out.join("plans").join(format!("{}.json", unit.name));
        write_file("split", &path, unit.plan.to_json() + "\n")?;
        plans.push(path);
    }

    let cells: Vec<(&Unit, CellInfo)> = cfg
        .sampling
        .iter()
        .flat_map(|&sampling| {
            let hash = &hash;
            units.iter().map(move |u| {
                (
                    u,
                    CellInfo {
                        experiment_id: cfg.experiment_id.clone(),
                        config_hash: hash.clone(),
                        seed: cfg.seed,
                        emotion_set: cfg.emotion_set,
                        regime: u.regime,
                        unit: u.name.clone(),
                        sampling,
                    },
                )
            })
        })
        .collect();

    let per_cell: Vec<PipelineResult<(Vec<LedgerRecord>, Vec<PathBuf>)>> = cells
        .par_iter()
        .map(|(unit, cell)| {
            let mut records = Vec::new();
            let mut checkpoints = Vec::new();
            for fold in 0..unit.plan.folds.len() {
                let job = FoldJob {
                    corpus: &corpus,
                    plan: &unit.plan,
                    fold,
                    cell,
                    sampler: cfg.sampler,
                    train: &cfg.train,
                    hidden_divisor: cfg.model.hidden_divisor,
                };
                let outcome = train_fold(&job)?;
                let stem = out.join("checkpoints").join(cell.name()).join(format!("fold{fold}"));
                let ckpt = stem.with_extension("sermlp");
                write_file("train", &ckpt, outcome.model.to_checkpoint_bytes())?;
                let curve = out.join("curves").join(cell.name()).join(format!("fold{fold}.csv"));
                let curve_dir = curve.parent().expect("curve paths have a parent");
                std::fs::create_dir_all(curve_dir).map_err(|e| io_err("train", curve_dir, e))?;
                classifier::write_loss_curve(&curve, &outcome.curve).map_err(|e| io_err("train", &curve, e))?;
                checkpoints.push(ckpt);
                records.extend(evaluate_fold(&corpus, &unit.plan, fold, &outcome.model, cell)?);
            }
            Ok((records, checkpoints))
        })
        .collect();
    let mut ledger = Vec::new();
    let mut checkpoints = Vec::new();
    for r in per_cell {
        let (records, ckpts) = r?;
        ledger.extend(records);
        checkpoints.extend(ckpts);
    }

    let ledger_path = out.join("ledger.jsonl");
    write_ledger(&ledger_path, &ledger).map_err(|e| io_err("report", &ledger_path, e))?;
    let mut grid = ExperimentGrid::from_ledger(&ledger, &datasets).map_err(|e| PipelineError::training("report", e))?;
    for (dataset, n) in class_counts(&records) {
        grid.set_class_count(&dataset, cfg.emotion_set, n);
    }
    let md_path = out.join(format!("grid_{}.md", cfg.experiment_id));
    let mut md = grid.render(GridFormat::Markdown, Some(&hash));
    md.push_str(&format!("seed: {}\n", cfg.seed));
    write_file("report", &md_path, md)?;
    let csv_path = out.join(format!("grid_{}.csv", cfg.experiment_id));
    write_file("report", &csv_path, grid.render(GridFormat::Csv, None))?;

    let tsne = match &cfg.tsne {
        Some(settings) => project_embeddings(&corpus, settings, cfg.seed, &out.join("tsne"))?,
        None => Vec::new(),
    };

    write_file("run", &out.join("config.json"), cfg.to_json() + "\n")?;
    let summary = RunSummary {
        experiment_id: cfg.experiment_id.clone(),
        config_hash: hash,
        seed: cfg.seed,
        status: "complete",
        ledger: ledger_path,
        plans,
        grids: vec![md_path, csv_path],
        checkpoints,
        tsne,
        records: ledger,
        grid,
    };
    write_file(
        "run",
        &out.join("run_manifest.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    )?;
    Ok(summary)
}

/// Runs t-SNE over (a stratified sample of) the corpus and writes
/// `points.csv` and `points.svg` under `dir`.
pub(crate) fn project_embeddings(
    corpus: &Corpus,
    settings: &TsneSettings,
    seed: u64,
    dir: &Path,
) -> PipelineResult<Vec<PathBuf>> {
    let strata: Vec<(String, String)> = corpus
        .pairs
        .iter()
        .map(|(r, _)| (r.dataset_id.clone(), r.unified_label.map(|l| l.to_string()).unwrap_or_default()))
        .collect();
    let keep = tsne::stratified_cap(&strata, settings.max_points, seed);
    let x = Array2::from_shape_fn((keep.len(), corpus.dim), |(i, j)| f64::from(corpus.pairs[keep[i]].1[j]));
    let cfg = tsne::TsneConfig {
        seed: rng::child_seed(seed, &["tsne"]),
        ..settings.config.clone()
    };
    let result = tsne::run_tsne(x.view(), &cfg).map_err(|e| match e {
        tsne::TsneError::InvalidPerplexity { .. } | tsne::TsneError::InvalidConfig(_) | tsne::TsneError::TooFewPoints(_) => {
            PipelineError::config("tsne", e)
        }
        other => PipelineError::training("tsne", other),
    })?;
    let points: Vec<ProjectedPoint> = keep
        .iter()
        .enumerate()
        .map(|(i, &k)| ProjectedPoint {
            id: corpus.pairs[k].0.id.clone(),
            x: result.embedding[[i, 0]],
            y: result.embedding[[i, 1]],
            dataset_id: strata[k].0.clone(),
            emotion: strata[k].1.clone(),
        })
        .collect();
    std::fs::create_dir_all(dir).map_err(|e| io_err("tsne", dir, e))?;
    let csv_path = dir.join("points.csv");
    tsne::write_points_csv(&csv_path, &points).map_err(|e| io_err("tsne", &csv_path, e))?;
    let svg_path = dir.join("points.svg");
    write_file("tsne", &svg_path, tsne::render_svg(&points))?;
    log::info!(
        target: "tsne",
        "{} points, final KL {:.4}",
        points.len(),
        result.kl_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(vec![csv_path, svg_path])
}
