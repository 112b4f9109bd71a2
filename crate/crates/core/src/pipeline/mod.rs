//! End-to-end experiment orchestration and the stage entry points behind
//! the `ser` subcommands.
//!
//! Every failure is classified as a config, data or training error, which
//! fixes the process exit code (2, 3, 4) and the `kind` of the JSON error
//! record written next to partial outputs.

pub mod cli;
mod commands;
mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::balancing::SamplingMethod;
use crate::classifier::TrainConfig;
use crate::embedding_store::{self, EmbeddingStore};
use crate::ingestion::{self, DurationBounds, UtteranceRecord};
use crate::splits::SplitPolicy;
use crate::taxonomy::{EmotionSet, EmotionSetKind, Taxonomy};
use crate::tsne::TsneConfig;

pub use commands::*;
pub use run::{run_experiment, RunSummary, INCOMPLETE_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Data,
    Training,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Training => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub stage: String,
    pub message: String,
}

impl PipelineError {
    pub fn new(kind: ErrorKind, stage: &str, message: impl fmt::Display) -> Self {
        PipelineError {
            kind,
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }

    pub fn config(stage: &str, message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Config, stage, message)
    }

    pub fn data(stage: &str, message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Data, stage, message)
    }

    pub fn training(stage: &str, message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Training, stage, message)
    }

    pub fn exit_code(&self) -> u8 {
        self.kind.exit_code()
    }

    /// One-line JSON error record.
    pub fn to_record(&self) -> String {
        serde_json::json!({
            "error": self.kind,
            "exit_code": self.exit_code(),
            "stage": self.stage,
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error in {}: {}", self.kind.as_str(), self.stage, self.message)
    }
}

impl ErrorKind {
    fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Training => "training",
        }
    }
}

impl std::error::Error for PipelineError {}

pub type PipelineResult<T> = Result<T, PipelineError>;

/// Which datasets a model is trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeConfig {
    /// One model over all datasets.
    Combined,
    /// One model per listed dataset; an empty list means every dataset present.
    Separate(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub manifests: Vec<PathBuf>,
    pub stores: Vec<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mappings_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub k_neighbors: usize,
    pub beta: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings { k_neighbors: 5, beta: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// Hidden widths are the standard widths divided by this (minimum 8).
    pub hidden_divisor: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings { hidden_divisor: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneSettings {
    pub max_points: usize,
    #[serde(flatten)]
    pub config: TsneConfig,
}

impl Default for TsneSettings {
    fn default() -> Self {
        TsneSettings {
            max_points: 5000,
            config: TsneConfig::default(),
        }
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<SamplingMethod>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(SamplingMethod),
        Many(Vec<SamplingMethod>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(m) => vec![m],
        OneOrMany::Many(v) => v,
    })
}

/// One experiment: an emotion set, a training regime and one or more
/// sampling methods over the same data and splits.
///
/// `train.seed` is ignored; training, balancing and split randomness all
/// derive from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub emotion_set: EmotionSetKind,
    pub regime: RegimeConfig,
    #[serde(deserialize_with = "one_or_many")]
    pub sampling: Vec<SamplingMethod>,
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitPolicy,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub duration: DurationBounds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tsne: Option<TsneSettings>,
}

impl ExperimentConfig {
    /// Parses a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> PipelineResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::config("config", format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::config("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }

    /// SHA-256 of the canonical JSON encoding with the output directory
    /// blanked, hex. Moving the outputs elsewhere keeps the hash.
    pub fn config_hash(&self) -> String {
        let mut content = self.clone();
        content.paths.output_dir = PathBuf::new();
        let canonical = serde_json::to_vec(&content).expect("configs always serialize");
        format!("{:x}", Sha256::digest(&canonical))
    }

    pub fn validate(&self) -> PipelineResult<()> {
        let stage = "config";
        if self.experiment_id.is_empty()
            || !self.experiment_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(PipelineError::config(stage, format!("experiment_id `{}` must be non-empty [A-Za-z0-9._-]", self.experiment_id)));
        }
        if self.sampling.is_empty() {
            return Err(PipelineError::config(stage, "sampling lists no methods"));
        }
        if self.paths.manifests.is_empty() || self.paths.stores.is_empty() {
            return Err(PipelineError::config(stage, "at least one manifest and one store are required"));
        }
        for p in self.paths.manifests.iter().chain(&self.paths.stores).chain(&self.paths.mappings_dir) {
            if !p.exists() {
                return Err(PipelineError::config(stage, format!("path does not exist: {}", p.display())));
            }
        }
        if self.model.hidden_divisor == 0 {
            return Err(PipelineError::config(stage, "model.hidden_divisor must be positive"));
        }
        if !(self.duration.min_s <= self.duration.max_s) {
            return Err(PipelineError::config(stage, "duration.min_s exceeds duration.max_s"));
        }
        self.train.validate().map_err(|e| PipelineError::config(stage, e))?;
        Ok(())
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.manifests.iter_mut().for_each(fix);
        self.stores.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        if let Some(m) = self.mappings_dir.as_mut() {
            fix(m);
        }
    }
}

pub(crate) fn load_taxonomy(dir: Option<&Path>, strict: bool) -> PipelineResult<Taxonomy> {
    let taxonomy = match dir {
        Some(d) => Taxonomy::load_dir(d).map_err(|e| PipelineError::config("project", e))?,
        None => Taxonomy::with_defaults(),
    };
    Ok(taxonomy.strict(strict))
}

pub(crate) fn load_manifests(paths: &[PathBuf]) -> PipelineResult<Vec<UtteranceRecord>> {
    let mut all = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for p in paths {
        for r in ingestion::read_manifest(p).map_err(|e| PipelineError::data("manifest", e))? {
            if !seen.insert(r.id.clone()) {
                return Err(PipelineError::data("manifest", format!("id `{}` appears in more than one manifest", r.id)));
            }
            all.push(r);
        }
    }
    Ok(all)
}

pub(crate) fn load_stores(paths: &[PathBuf]) -> PipelineResult<Vec<EmbeddingStore>> {
    paths
        .iter()
        .map(|p| embedding_store::read_store(p).map_err(|e| PipelineError::data("store", format!("{}: {e}", p.display()))))
        .collect()
}

/// Manifest records (projected to `set`) joined with their embeddings.
/// Every kept record must have a vector.
pub(crate) fn joined_pairs(
    records: &[UtteranceRecord],
    stores: &[EmbeddingStore],
    taxonomy: &Taxonomy,
    set: &EmotionSet,
) -> PipelineResult<Vec<(UtteranceRecord, Vec<f32>)>> {
    let projected = taxonomy.project_manifest(records, set).map_err(|e| PipelineError::data("project", e))?;
    let joined = embedding_store::join_stores(&projected, stores).map_err(|e| PipelineError::data("join", e))?;
    if joined.manifest_only > 0 {
        let have: std::collections::HashSet<&str> = joined.pairs.iter().map(|(r, _)| r.id.as_str()).collect();
        let sample: Vec<&str> = projected.iter().map(|r| r.id.as_str()).filter(|id| !have.contains(id)).take(5).collect();
        return Err(PipelineError::data(
            "join",
            format!("{} manifest records have no embedding, e.g. {sample:?}", joined.manifest_only),
        ));
    }
    if joined.store_only > 0 {
        log::info!(target: "join", "{} stored vectors are not used by this emotion set", joined.store_only);
    }
    Ok(joined.pairs)
}

/// Dataset ids in first-appearance order.
pub(crate) fn dataset_order(records: &[UtteranceRecord]) -> Vec<String> {
    let mut order: Vec<String> = Vec::new();
    for r in records {
        if !order.contains(&r.dataset_id) {
            order.push(r.dataset_id.clone());
        }
    }
    order
}

/// Number of distinct unified labels per dataset.
pub(crate) fn class_counts(records: &[UtteranceRecord]) -> BTreeMap<String, usize> {
    let mut labels: BTreeMap<String, std::collections::BTreeSet<_>> = BTreeMap::new();
    for r in records {
        if let Some(l) = r.unified_label {
            labels.entry(r.dataset_id.clone()).or_default().insert(l);
        }
    }
    labels.into_iter().map(|(d, s)| (d, s.len())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> &'static str {
        r#"{
            "experiment_id": "four-combined",
            "emotion_set": "four",
            "regime": "combined",
            "sampling": "undersample",
            "seed": 3,
            "paths": {"manifests": ["m.jsonl"], "stores": ["s.bin"], "output_dir": "out"}
        }"#
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(sample_json()).unwrap();
        assert_eq!(cfg.sampling, vec![SamplingMethod::Undersample]);
        assert_eq!(cfg.regime, RegimeConfig::Combined);
        assert_eq!(cfg.train.learning_rate, 1e-5);
        assert_eq!(cfg.split.n_folds, 5);
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let sep: RegimeConfig = serde_json::from_str(r#"{"separate": ["TESS"]}"#).unwrap();
        assert_eq!(sep, RegimeConfig::Separate(vec!["TESS".into()]));
        let many: ExperimentConfig =
            serde_json::from_str(&sample_json().replace(r#""undersample""#, r#"["smote", "adasyn"]"#)).unwrap();
        assert_eq!(many.sampling, vec![SamplingMethod::Smote, SamplingMethod::Adasyn]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = sample_json().replace(r#""seed": 3"#, r#""sead": 3"#);
        assert!(serde_json::from_str::<ExperimentConfig>(&bad).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a: ExperimentConfig = serde_json::from_str(sample_json()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        b.paths.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 4;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        std::fs::write(&path, sample_json()).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.output_dir, dir.path().join("out"));
        let err = cfg.validate().unwrap_err();
        assert_eq!((err.kind, err.exit_code()), (ErrorKind::Config, 2));
        assert!(err.message.contains("does not exist"));
    }

    #[test]
    fn error_record_is_json() {
        let e = PipelineError::training("train", "loss diverged");
        let v: serde_json::Value = serde_json::from_str(&e.to_record()).unwrap();
        assert_eq!(v["error"], "training");
        assert_eq!(v["exit_code"], 4);
    }
}
