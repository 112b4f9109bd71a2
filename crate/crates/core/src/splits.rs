//! Leave-one-speaker-out test selection and cross-validation folds.
//!
//! One speaker per dataset is held out for testing before any fold is
//! built. Folds then partition the remaining utterances:
//!
//! * by speaker groups (default),
//! * one fold per speaker when fewer speakers than folds remain,
//! * by utterance when a single training speaker remains,
//! * by stratified percentage split over `(dataset, label)` for combined
//!   training.
//!
//! [`audit_plan`] re-checks the leakage and coverage guarantees on any plan.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::UtteranceRecord;
use crate::rng;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("dataset `{0}` has fewer than two speakers")]
    SingleSpeakerDataset(String),
    #[error("dataset `{0}` has no utterances left for training")]
    EmptyTrainingSet(String),
    #[error("combined folds need at least two datasets, got {0}")]
    TooFewDatasets(usize),
    #[error("invalid split policy: {0}")]
    InvalidPolicy(String),
    #[error("plan parse error: {0}")]
    ParseError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPolicy {
    pub seed: u64,
    /// Speakers count as balanced when max/min total duration is at most this.
    pub balance_ratio_threshold: f64,
    pub n_folds: usize,
    /// Datasets that keep only this fraction of their non-test utterances
    /// for cross-validation; the rest becomes a separate in-dataset test pool.
    pub train_fraction: BTreeMap<String, f64>,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy {
            seed: 0,
            balance_ratio_threshold: 1.5,
            n_folds: 5,
            train_fraction: [("EmoFilm".to_string(), 0.85)].into_iter().collect(),
        }
    }
}

impl SplitPolicy {
    pub fn with_seed(seed: u64) -> Self {
        SplitPolicy {
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), SplitError> {
        if self.n_folds < 2 {
            return Err(SplitError::InvalidPolicy(format!("n_folds must be at least 2, got {}", self.n_folds)));
        }
        if !(self.balance_ratio_threshold > 0.0) {
            return Err(SplitError::InvalidPolicy("balance_ratio_threshold must be positive".into()));
        }
        if let Some((d, f)) = self.train_fraction.iter().find(|(_, f)| !(**f > 0.0 && **f <= 1.0)) {
            return Err(SplitError::InvalidPolicy(format!("train_fraction for {d} must be in (0, 1], got {f}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Separate(String),
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    SpeakerGroups,
    OneSpeakerPerFold,
    Utterance,
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRef {
    pub dataset_id: String,
    pub speaker_id: String,
}

/// Everything needed to train and evaluate one regime without leakage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub regime: Regime,
    pub mode: FoldMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub seed: u64,
    pub test_speakers: BTreeMap<String, String>,
    /// Utterances of the held-out speakers, sorted.
    pub test_ids: Vec<String>,
    /// Non-training remainder of datasets with a `train_fraction` below one.
    #[serde(default)]
    pub extra_test_pool: Vec<String>,
    pub folds: Vec<Fold>,
    /// Dataset and speaker of every id the plan mentions.
    pub utterances: BTreeMap<String, UtteranceRef>,
}

impl SplitPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, SplitError> {
        if text.trim().is_empty() {
            return Err(SplitError::ParseError("empty plan".into()));
        }
        let plan: SplitPlan = serde_json::from_str(text).map_err(|e| SplitError::ParseError(e.to_string()))?;
        if plan.folds.is_empty() {
            return Err(SplitError::ParseError("plan has no folds".into()));
        }
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<(), SplitError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SplitError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn speaker_durations<'a>(records: impl IntoIterator<Item = &'a UtteranceRecord>) -> BTreeMap<String, f64> {
    let mut totals = BTreeMap::new();
    for r in records {
        *totals.entry(r.speaker_id.clone()).or_insert(0.0) += r.duration_s;
    }
    totals
}

fn by_dataset(manifest: &[UtteranceRecord]) -> BTreeMap<&str, Vec<&UtteranceRecord>> {
    let mut out: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in manifest {
        out.entry(r.dataset_id.as_str()).or_default().push(r);
    }
    out
}

/// Picks one test speaker per dataset: a seeded uniform draw when speaker
/// durations are balanced (max/min within the threshold, inclusive),
/// otherwise the speaker with the most speech.
pub fn select_test_speakers(
    manifest: &[UtteranceRecord],
    policy: &SplitPolicy,
) -> Result<BTreeMap<String, String>, SplitError> {
    policy.validate()?;
    let mut chosen = BTreeMap::new();
    for (dataset, records) in by_dataset(manifest) {
        let totals = speaker_durations(records.iter().copied());
        if totals.len() < 2 {
            return Err(SplitError::SingleSpeakerDataset(dataset.to_string()));
        }
        let max = totals.values().copied().fold(f64::MIN, f64::max);
        let min = totals.values().copied().fold(f64::MAX, f64::min);
        let speaker = if max <= policy.balance_ratio_threshold * min {
            let speakers: Vec<&String> = totals.keys().collect();
            let mut stream = rng::stream(policy.seed, &["test-speaker", dataset]);
            (*speakers.choose(&mut stream).expect("at least two speakers")).clone()
        } else {
            // BTreeMap order makes the lowest id win exact ties
            let mut best = totals.iter().next().expect("non-empty");
            for entry in &totals {
                if *entry.1 > *best.1 {
                    best = entry;
                }
            }
            best.0.clone()
        };
        chosen.insert(dataset.to_string(), speaker);
    }
    Ok(chosen)
}

fn sorted(mut ids: Vec<String>) -> Vec<String> {
    ids.sort();
    ids
}

fn folds_from_groups(groups: &[Vec<String>]) -> Vec<Fold> {
    (0..groups.len())
        .map(|i| Fold {
            validation: sorted(groups[i].clone()),
            train: sorted(
                groups
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .flat_map(|(_, g)| g.iter().cloned())
                    .collect(),
            ),
        })
        .collect()
}

/// Result of fold construction for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFolds {
    pub mode: FoldMode,
    pub folds: Vec<Fold>,
    pub extra_test_pool: Vec<String>,
}

/// Cross-validation folds over one dataset's non-test utterances.
pub fn build_folds(
    records: &[UtteranceRecord],
    dataset_id: &str,
    policy: &SplitPolicy,
) -> Result<DatasetFolds, SplitError> {
    policy.validate()?;
    let mut pool: Vec<&UtteranceRecord> = records.iter().filter(|r| r.dataset_id == dataset_id).collect();
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    if pool.is_empty() {
        return Err(SplitError::EmptyTrainingSet(dataset_id.to_string()));
    }

    let mut extra_test_pool = Vec::new();
    if let Some(&fraction) = policy.train_fraction.get(dataset_id) {
        let mut stream = rng::stream(policy.seed, &["train-fraction", dataset_id]);
        pool.shuffle(&mut stream);
        let keep = ((pool.len() as f64) * fraction).round() as usize;
        extra_test_pool = sorted(pool.split_off(keep).into_iter().map(|r| r.id.clone()).collect());
        pool.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let totals = speaker_durations(pool.iter().copied());
    let (mode, groups) = if totals.len() == 1 {
        let mut ids: Vec<String> = pool.iter().map(|r| r.id.clone()).collect();
        let mut stream = rng::stream(policy.seed, &["utterance-folds", dataset_id]);
        ids.shuffle(&mut stream);
        let k = policy.n_folds.min(ids.len());
        let mut groups = vec![Vec::new(); k];
        for (i, id) in ids.into_iter().enumerate() {
            groups[i % k].push(id);
        }
        (FoldMode::Utterance, groups)
    } else {
        let mut speakers: Vec<(&String, f64)> = totals.iter().map(|(s, d)| (s, *d)).collect();
        speakers.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        let k = policy.n_folds.min(speakers.len());
        let mode = if speakers.len() < policy.n_folds {
            FoldMode::OneSpeakerPerFold
        } else {
            FoldMode::SpeakerGroups
        };
        let group_of: HashMap<&String, usize> = speakers.iter().enumerate().map(|(i, (s, _))| (*s, i % k)).collect();
        let mut groups = vec![Vec::new(); k];
        for r in &pool {
            groups[group_of[&r.speaker_id]].push(r.id.clone());
        }
        (mode, groups)
    };

    let folds = folds_from_groups(&groups);
    if folds.iter().any(|f| f.train.is_empty()) {
        return Err(SplitError::EmptyTrainingSet(dataset_id.to_string()));
    }
    Ok(DatasetFolds {
        mode,
        folds,
        extra_test_pool,
    })
}

/// Stratified percentage folds across datasets: each `(dataset, label)`
/// stratum is shuffled and dealt round-robin into `n_folds` validation groups.
/// The dealing offset carries over between strata so fold totals stay even.
pub fn build_combined_folds(records: &[UtteranceRecord], policy: &SplitPolicy) -> Result<Vec<Fold>, SplitError> {
    policy.validate()?;
    let datasets: BTreeSet<&str> = records.iter().map(|r| r.dataset_id.as_str()).collect();
    if datasets.len() < 2 {
        return Err(SplitError::TooFewDatasets(datasets.len()));
    }
    let mut strata: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for r in records {
        let label = r
            .unified_label
            .map(|l| l.to_string())
            .unwrap_or_else(|| r.native_label.clone());
        strata.entry((r.dataset_id.clone(), label)).or_default().push(r.id.clone());
    }
    let k = policy.n_folds;
    let mut groups = vec![Vec::new(); k];
    let mut offset = 0;
    for ((dataset, label), mut ids) in strata {
        if ids.len() < k {
            log::warn!(target: "split", "stratum {dataset}/{label} has {} utterances for {k} folds", ids.len());
        }
        ids.sort();
        let mut stream = rng::stream(policy.seed, &["combined-folds", &dataset, &label]);
        ids.shuffle(&mut stream);
        let n = ids.len();
        for (i, id) in ids.into_iter().enumerate() {
            groups[(offset + i) % k].push(id);
        }
        offset = (offset + n) % k;
    }
    let folds = folds_from_groups(&groups);
    if folds.iter().any(|f| f.train.is_empty()) {
        return Err(SplitError::EmptyTrainingSet("combined".into()));
    }
    Ok(folds)
}

fn utterance_index(records: &[UtteranceRecord]) -> BTreeMap<String, UtteranceRef> {
    records
        .iter()
        .map(|r| {
            (
                r.id.clone(),
                UtteranceRef {
                    dataset_id: r.dataset_id.clone(),
                    speaker_id: r.speaker_id.clone(),
                },
            )
        })
        .collect()
}

fn partition_test(
    records: &[UtteranceRecord],
    test_speakers: &BTreeMap<String, String>,
) -> (Vec<UtteranceRecord>, Vec<String>) {
    let mut rest = Vec::new();
    let mut test = Vec::new();
    for r in records {
        if test_speakers.get(&r.dataset_id) == Some(&r.speaker_id) {
            test.push(r.id.clone());
        } else {
            rest.push(r.clone());
        }
    }
    (rest, sorted(test))
}

/// Plan for training and testing on a single dataset.
pub fn plan_separate(manifest: &[UtteranceRecord], dataset_id: &str, policy: &SplitPolicy) -> Result<SplitPlan, SplitError> {
    let records: Vec<UtteranceRecord> = manifest.iter().filter(|r| r.dataset_id == dataset_id).cloned().collect();
    if records.is_empty() {
        return Err(SplitError::EmptyTrainingSet(dataset_id.to_string()));
    }
    let test_speakers = select_test_speakers(&records, policy)?;
    let (rest, test_ids) = partition_test(&records, &test_speakers);
    let built = build_folds(&rest, dataset_id, policy)?;
    Ok(SplitPlan {
        regime: Regime::Separate(dataset_id.to_string()),
        mode: built.mode,
        config_hash: None,
        seed: policy.seed,
        test_speakers,
        test_ids,
        extra_test_pool: built.extra_test_pool,
        folds: built.folds,
        utterances: utterance_index(&records),
    })
}

/// Plan for training on every dataset at once, one held-out speaker each.
pub fn plan_combined(manifest: &[UtteranceRecord], policy: &SplitPolicy) -> Result<SplitPlan, SplitError> {
    let test_speakers = select_test_speakers(manifest, policy)?;
    let (rest, test_ids) = partition_test(manifest, &test_speakers);
    let folds = build_combined_folds(&rest, policy)?;
    Ok(SplitPlan {
        regime: Regime::Combined,
        mode: FoldMode::Stratified,
        config_hash: None,
        seed: policy.seed,
        test_speakers,
        test_ids,
        extra_test_pool: Vec::new(),
        folds,
        utterances: utterance_index(manifest),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// A held-out speaker's utterance inside a fold.
    Leakage,
    /// Same id in both train and validation of one fold.
    TrainValidationOverlap,
    /// A non-test utterance validated zero or several times.
    Coverage,
    /// An id with no dataset/speaker entry.
    UnknownId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub id: String,
    pub fold: Option<usize>,
    pub detail: String,
}

/// Checks the leakage and coverage invariants of a plan.
pub fn audit_plan(plan: &SplitPlan) -> Vec<Violation> {
    let mut violations = Vec::new();
    let test_ids: HashSet<&str> = plan.test_ids.iter().map(String::as_str).collect();
    let is_test = |id: &str| {
        test_ids.contains(id)
            || plan
                .utterances
                .get(id)
                .is_some_and(|u| plan.test_speakers.get(&u.dataset_id) == Some(&u.speaker_id))
    };

    let mut validated: BTreeMap<&str, usize> = BTreeMap::new();
    let mut universe: BTreeSet<&str> = BTreeSet::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let validation: HashSet<&str> = fold.validation.iter().map(String::as_str).collect();
        for (scope, ids) in [("train", &fold.train), ("validation", &fold.validation)] {
            for id in ids {
                if !plan.utterances.contains_key(id) {
                    violations.push(Violation {
                        kind: ViolationKind::UnknownId,
                        id: id.clone(),
                        fold: Some(f),
                        detail: format!("{scope} id missing from utterance index"),
                    });
                }
                if is_test(id) {
                    violations.push(Violation {
                        kind: ViolationKind::Leakage,
                        id: id.clone(),
                        fold: Some(f),
                        detail: format!("held-out speaker utterance in fold {f} {scope}"),
                    });
                } else {
                    universe.insert(id);
                }
            }
        }
        for id in &fold.train {
            if validation.contains(id.as_str()) {
                violations.push(Violation {
                    kind: ViolationKind::TrainValidationOverlap,
                    id: id.clone(),
                    fold: Some(f),
                    detail: format!("in both train and validation of fold {f}"),
                });
            }
        }
        for id in &fold.validation {
            if !is_test(id) {
                *validated.entry(id).or_insert(0) += 1;
            }
        }
    }
    for id in universe {
        let times = validated.get(id).copied().unwrap_or(0);
        if times != 1 {
            violations.push(Violation {
                kind: ViolationKind::Coverage,
                id: id.to_string(),
                fold: None,
                detail: format!("validated {times} times, expected exactly once"),
            });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::EmotionLabel;

    fn rec(dataset: &str, speaker: &str, i: usize, duration_s: f64) -> UtteranceRecord {
        UtteranceRecord {
            id: format!("{dataset}/{speaker}/{i:04}.wav"),
            dataset_id: dataset.into(),
            speaker_id: speaker.into(),
            native_label: "angry".into(),
            unified_label: Some(EmotionLabel::Angry),
            duration_s,
            language: "en".into(),
            sample_rate_hz: 16_000,
        }
    }

    fn speakers(dataset: &str, layout: &[(&str, usize, f64)]) -> Vec<UtteranceRecord> {
        layout.iter()
            .flat_map(|&(s, n, total)| (0..n).map(move |i| rec(dataset, s, i, total / n as f64)))
            .collect()
    }

    #[test]
    fn balanced_speakers_draw_randomly() {
        let m = speakers("D", &[("A", 100, 600.0), ("B", 100, 610.0)]);
        let mut seen = BTreeSet::new();
        for seed in 0..32 {
            let pick = select_test_speakers(&m, &SplitPolicy::with_seed(seed)).unwrap()["D"].clone();
            assert_eq!(pick, select_test_speakers(&m, &SplitPolicy::with_seed(seed)).unwrap()["D"]);
            seen.insert(pick);
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn unbalanced_speakers_lose_the_longest() {
        let m = speakers("D", &[("A", 60, 3600.0), ("B", 10, 600.0), ("C", 10, 580.0)]);
        for seed in 0..8 {
            assert_eq!(select_test_speakers(&m, &SplitPolicy::with_seed(seed)).unwrap()["D"], "A");
        }
    }

    #[test]
    fn threshold_boundary_counts_as_balanced() {
        let m = speakers("D", &[("A", 3, 150.0), ("B", 2, 100.0)]);
        let mut seen = BTreeSet::new();
        for seed in 0..32 {
            seen.insert(select_test_speakers(&m, &SplitPolicy::with_seed(seed)).unwrap()["D"].clone());
        }
        assert_eq!(seen.len(), 2, "ratio exactly 1.5 must take the random branch");
        let equal = speakers("D", &[("A", 2, 100.0), ("B", 2, 100.0)]);
        let mut seen = BTreeSet::new();
        for seed in 0..32 {
            seen.insert(select_test_speakers(&equal, &SplitPolicy::with_seed(seed)).unwrap()["D"].clone());
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn single_speaker_dataset_is_an_error() {
        let m = speakers("D", &[("A", 3, 10.0)]);
        assert!(matches!(
            select_test_speakers(&m, &SplitPolicy::default()),
            Err(SplitError::SingleSpeakerDataset(_))
        ));
    }

    #[test]
    fn nine_speakers_make_five_even_groups() {
        let layout: Vec<(String, usize, f64)> = (0..9).map(|i| (format!("s{i}"), 4, 10.0 + i as f64)).collect();
        let layout: Vec<(&str, usize, f64)> = layout.iter().map(|(s, n, d)| (s.as_str(), *n, *d)).collect();
        let m = speakers("D", &layout);
        let built = build_folds(&m, "D", &SplitPolicy::default()).unwrap();
        assert_eq!(built.mode, FoldMode::SpeakerGroups);
        assert_eq!(built.folds.len(), 5);
        let per_fold: Vec<BTreeSet<&str>> = built
            .folds
            .iter()
            .map(|f| f.validation.iter().map(|id| id.split('/').nth(1).unwrap()).collect())
            .collect();
        let sizes: Vec<usize> = per_fold.iter().map(BTreeSet::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<&str> = per_fold.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all.len(), 9);
        all.dedup();
        assert_eq!(all.len(), 9);
    }

    #[test]
    fn fewer_speakers_than_folds() {
        let m = speakers("D", &[("A", 5, 10.0), ("B", 5, 10.0), ("C", 5, 10.0)]);
        let built = build_folds(&m, "D", &SplitPolicy::default()).unwrap();
        assert_eq!(built.mode, FoldMode::OneSpeakerPerFold);
        assert_eq!(built.folds.len(), 3);
    }

    #[test]
    fn single_training_speaker_splits_utterances() {
        let m = speakers("TESS", &[("YAF", 1400, 2800.0)]);
        let built = build_folds(&m, "TESS", &SplitPolicy::default()).unwrap();
        assert_eq!(built.mode, FoldMode::Utterance);
        assert_eq!(built.folds.iter().map(|f| f.validation.len()).collect::<Vec<_>>(), vec![280; 5]);
        assert!(built.folds.iter().all(|f| f.train.len() == 1120));
    }

    #[test]
    fn one_clip_cannot_train() {
        let m = speakers("D", &[("A", 1, 3.0)]);
        assert!(matches!(build_folds(&m, "D", &SplitPolicy::default()), Err(SplitError::EmptyTrainingSet(_))));
    }

    #[test]
    fn stratum_dealing() {
        let mut m = speakers("A", &[("a", 10, 30.0)]);
        m.extend(speakers("B", &[("b", 3, 9.0)]));
        let folds = build_combined_folds(&m, &SplitPolicy::default()).unwrap();
        let count = |f: &Fold, prefix: &str| f.validation.iter().filter(|id| id.starts_with(prefix)).count();
        assert_eq!(folds.iter().map(|f| count(f, "A/")).collect::<Vec<_>>(), vec![2; 5]);
        let mut b: Vec<usize> = folds.iter().map(|f| count(f, "B/")).collect();
        b.sort();
        assert_eq!(b, vec![0, 0, 1, 1, 1]);
        assert!(matches!(
            build_combined_folds(&speakers("A", &[("a", 10, 30.0)]), &SplitPolicy::default()),
            Err(SplitError::TooFewDatasets(1))
        ));
    }

    #[test]
    fn plan_file_round_trip_and_audit() {
        let mut m = speakers("A", &[("a1", 6, 30.0), ("a2", 6, 31.0), ("a3", 6, 29.0)]);
        m.extend(speakers("B", &[("b1", 6, 30.0), ("b2", 6, 30.0)]));
        let plan = plan_combined(&m, &SplitPolicy::with_seed(3)).unwrap();
        assert!(audit_plan(&plan).is_empty());
        let back = SplitPlan::from_json(&plan.to_json()).unwrap();
        assert_eq!(back, plan);
        assert!(matches!(SplitPlan::from_json(""), Err(SplitError::ParseError(_))));
        assert!(matches!(SplitPlan::from_json("{}"), Err(SplitError::ParseError(_))));
    }

    #[test]
    fn moved_test_clip_is_one_violation() {
        let m = speakers("D", &[("A", 5, 10.0), ("B", 5, 10.0), ("C", 5, 10.0), ("E", 5, 10.0)]);
        let mut plan = plan_separate(&m, "D", &SplitPolicy::with_seed(1)).unwrap();
        let moved = plan.test_ids.remove(0);
        plan.folds[0].train.push(moved.clone());
        let v = audit_plan(&plan);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!((v[0].kind.clone(), v[0].id.clone(), v[0].fold), (ViolationKind::Leakage, moved, Some(0)));
    }

    #[test]
    fn dropped_validation_id_breaks_coverage() {
        let m = speakers("D", &[("A", 5, 10.0), ("B", 5, 10.0), ("C", 5, 10.0)]);
        let mut plan = plan_separate(&m, "D", &SplitPolicy::with_seed(1)).unwrap();
        let gone = plan.folds[0].validation.pop().unwrap();
        let v = audit_plan(&plan);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].kind.clone(), v[0].id.clone()), (ViolationKind::Coverage, gone));
    }
}
