//! Class rebalancing of embedding rows: random undersampling, SMOTE and
//! ADASYN.
//!
//! All methods equalize class counts. Oversamplers keep every original row
//! untouched and append synthetic rows after them, grouped by class in
//! descending original count. Each class draws from its own named random
//! stream, so results do not depend on processing order or parallelism.

pub mod knn;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_store::{EmbeddingStore, StoreError};
use crate::ingestion::UtteranceRecord;
use crate::rng;
use crate::taxonomy::EmotionLabel;

pub use knn::{nearest, NeighborIndex};

#[derive(Debug, Error)]
pub enum BalanceError {
    #[error("no samples to balance")]
    EmptyClass,
    #[error("class {class} has {count} samples, needs more than k_neighbors = {k}")]
    TooFewSamples { class: EmotionLabel, count: usize, k: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("record `{0}` has no unified label")]
    Unlabeled(String),
}

/// Feature rows with one class label and one id each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    dim: usize,
    values: Vec<f64>,
    labels: Vec<EmotionLabel>,
    ids: Vec<String>,
}

impl LabeledMatrix {
    pub fn new(dim: usize) -> Self {
        LabeledMatrix {
            dim,
            values: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    /// Rows from joined `(record, embedding)` pairs; every record must carry a unified label.
    pub fn from_pairs(pairs: &[(UtteranceRecord, Vec<f32>)]) -> Result<Self, BalanceError> {
        let dim = pairs.first().map_or(0, |p| p.1.len());
        let mut m = LabeledMatrix::new(dim);
        for (record, vector) in pairs {
            let label = record
                .unified_label
                .ok_or_else(|| BalanceError::Unlabeled(record.id.clone()))?;
            let row: Vec<f64> = vector.iter().map(|&v| f64::from(v)).collect();
            m.push(record.id.clone(), label, &row);
        }
        Ok(m)
    }

    pub fn push(&mut self, id: impl Into<String>, label: EmotionLabel, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "row width must match matrix width");
        self.values.extend_from_slice(row);
        self.labels.push(label);
        self.ids.push(id.into());
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> EmotionLabel {
        self.labels[i]
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn class_counts(&self) -> BTreeMap<EmotionLabel, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    pub fn class_indices(&self) -> BTreeMap<EmotionLabel, Vec<usize>> {
        let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            out.entry(l).or_default().push(i);
        }
        out
    }

    fn select(&self, rows: &[usize]) -> LabeledMatrix {
        let mut out = LabeledMatrix::new(self.dim);
        for &i in rows {
            out.push(self.ids[i].clone(), self.labels[i], self.row(i));
        }
        out
    }

    /// Rows as an embedding store (values narrowed to f32).
    pub fn to_store(&self) -> Result<EmbeddingStore, StoreError> {
        let mut store = EmbeddingStore::new(self.dim)?;
        let mut buf = vec![0f32; self.dim];
        for i in 0..self.len() {
            for (b, v) in buf.iter_mut().zip(self.row(i)) {
                *b = *v as f32;
            }
            store.push(self.ids[i].clone(), &buf)?;
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    None,
    Undersample,
    Smote,
    Adasyn,
}

impl SamplingMethod {
    pub const ALL: [SamplingMethod; 4] = [
        SamplingMethod::Undersample,
        SamplingMethod::None,
        SamplingMethod::Smote,
        SamplingMethod::Adasyn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMethod::None => "none",
            SamplingMethod::Undersample => "undersample",
            SamplingMethod::Smote => "smote",
            SamplingMethod::Adasyn => "adasyn",
        }
    }

    /// Report column code: DS, UN, SM, AD.
    pub fn code(self) -> &'static str {
        match self {
            SamplingMethod::Undersample => "DS",
            SamplingMethod::None => "UN",
            SamplingMethod::Smote => "SM",
            SamplingMethod::Adasyn => "AD",
        }
    }
}

impl fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplingMethod {
    type Err = BalanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "un" => Ok(SamplingMethod::None),
            "undersample" | "ds" => Ok(SamplingMethod::Undersample),
            "smote" | "sm" => Ok(SamplingMethod::Smote),
            "adasyn" | "ad" => Ok(SamplingMethod::Adasyn),
            other => Err(BalanceError::InvalidConfig(format!("unknown sampling method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub method: SamplingMethod,
    pub k_neighbors: usize,
    /// ADASYN balance degree in (0, 1]; 1 means fully balanced.
    pub beta: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            method: SamplingMethod::None,
            k_neighbors: 5,
            beta: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn with_method(method: SamplingMethod, seed: u64) -> Self {
        SamplerConfig {
            method,
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), BalanceError> {
        if self.k_neighbors == 0 {
            return Err(BalanceError::InvalidConfig("k_neighbors must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(BalanceError::InvalidConfig(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

pub fn resample(data: &LabeledMatrix, cfg: &SamplerConfig) -> Result<LabeledMatrix, BalanceError> {
    match cfg.method {
        SamplingMethod::None => Ok(data.clone()),
        SamplingMethod::Undersample => undersample(data, cfg.seed),
        SamplingMethod::Smote => smote(data, cfg),
        SamplingMethod::Adasyn => adasyn(data, cfg),
    }
}

/// Reduces every class to the smallest class count, choosing survivors
/// uniformly without replacement. Survivors keep their original order.
pub fn undersample(data: &LabeledMatrix, seed: u64) -> Result<LabeledMatrix, BalanceError> {
    if data.is_empty() {
        return Err(BalanceError::EmptyClass);
    }
    let classes = data.class_indices();
    let floor = classes.values().map(Vec::len).min().expect("non-empty data has a class");
    let mut keep = vec![false; data.len()];
    for (class, members) in &classes {
        let mut stream = rng::stream(seed, &["balance", "undersample", class.as_str()]);
        for pick in index::sample(&mut stream, members.len(), floor) {
            keep[members[pick]] = true;
        }
    }
    let rows: Vec<usize> = (0..data.len()).filter(|&i| keep[i]).collect();
    Ok(data.select(&rows))
}

/// Classes in synthesis order: descending count, ties by label.
fn synthesis_order(classes: &BTreeMap<EmotionLabel, Vec<usize>>) -> Vec<(EmotionLabel, &[usize])> {
    let mut order: Vec<_> = classes.iter().map(|(c, m)| (*c, m.as_slice())).collect();
    order.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    order
}

struct Synthetic {
    base: usize,
    row: Vec<f64>,
}

fn interpolate(data: &LabeledMatrix, base: usize, toward: usize, lambda: f64) -> Vec<f64> {
    data.row(base)
        .iter()
        .zip(data.row(toward))
        .map(|(a, b)| a + lambda * (b - a))
        .collect()
}

fn same_class_neighbors(
    data: &LabeledMatrix,
    members: &[usize],
    queries: impl IntoParallelIterator<Item = usize>,
    k: usize,
) -> HashMap<usize, Vec<usize>> {
    let index = NeighborIndex::new(data, members);
    queries
        .into_par_iter()
        .map(|q| (q, index.nearest(q, k)))
        .collect()
}

fn append_synthetics(out: &mut LabeledMatrix, method: &str, class: EmotionLabel, synthetics: &[Synthetic]) {
    for (counter, s) in synthetics.iter().enumerate() {
        out.push(format!("synthetic/{method}/{class}/{counter}"), class, &s.row);
    }
}

fn check_class_size(class: EmotionLabel, members: &[usize], k: usize) -> Result<(), BalanceError> {
    if members.len() <= k {
        return Err(BalanceError::TooFewSamples {
            class,
            count: members.len(),
            k,
        });
    }
    Ok(())
}

/// Oversamples every class up to the majority count by interpolating
/// between a random member and one of its `k` nearest same-class neighbours.
pub fn smote(data: &LabeledMatrix, cfg: &SamplerConfig) -> Result<LabeledMatrix, BalanceError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(BalanceError::EmptyClass);
    }
    let k = cfg.k_neighbors;
    let classes = data.class_indices();
    let order = synthesis_order(&classes);
    let majority = order[0].1.len();
    for &(class, members) in &order {
        if members.len() < majority {
            check_class_size(class, members, k)?;
        }
    }

    let per_class: Vec<Vec<Synthetic>> = order
        .par_iter()
        .map(|&(class, members)| {
            let needed = majority - members.len();
            if needed == 0 {
                return Vec::new();
            }
            let mut stream = rng::stream(cfg.seed, &["balance", "smote", class.as_str()]);
            let draws: Vec<(usize, usize, f64)> = (0..needed)
                .map(|_| {
                    let base = members[stream.random_range(0..members.len())];
                    (base, stream.random_range(0..k), stream.random::<f64>())
                })
                .collect();
            let mut bases: Vec<usize> = draws.iter().map(|d| d.0).collect();
            bases.sort_unstable();
            bases.dedup();
            let neighbors = same_class_neighbors(data, members, bases, k);
            draws
                .into_iter()
                .map(|(base, slot, lambda)| Synthetic {
                    base,
                    row: interpolate(data, base, neighbors[&base][slot], lambda),
                })
                .collect()
        })
        .collect();

    let mut out = data.clone();
    for (&(class, _), synthetics) in order.iter().zip(&per_class) {
        append_synthetics(&mut out, "smote", class, synthetics);
    }
    Ok(out)
}

/// Per-member difficulty weights for one class: the share of other-class
/// rows among each member's `k` nearest neighbours in the whole matrix,
/// normalized to sum to one (uniform when every share is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct AdasynWeights {
    pub members: Vec<usize>,
    pub ratios: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn adasyn_weights(data: &LabeledMatrix, class: EmotionLabel, k: usize) -> AdasynWeights {
    let members: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
    let everyone: Vec<usize> = (0..data.len()).collect();
    let index = NeighborIndex::new(data, &everyone);
    let ratios: Vec<f64> = members
        .par_iter()
        .map(|&i| {
            let foreign = index
                .nearest(i, k)
                .into_iter()
                .filter(|&j| data.label(j) != class)
                .count();
            foreign as f64 / k as f64
        })
        .collect();
    let total: f64 = ratios.iter().sum();
    let normalized = if total > 0.0 {
        ratios.iter().map(|r| r / total).collect()
    } else {
        vec![1.0 / members.len() as f64; members.len()]
    };
    AdasynWeights {
        members,
        ratios,
        normalized,
    }
}

/// What ADASYN did to one class.
#[derive(Debug, Clone, PartialEq)]
pub struct AdasynClassReport {
    pub class: EmotionLabel,
    pub weights: AdasynWeights,
    /// `round(normalized_i * G)` before trimming or topping up.
    pub allocation: Vec<usize>,
    /// Synthetics actually generated from each member.
    pub generated: Vec<usize>,
}

/// Adaptive oversampling: members whose neighbourhoods are dominated by
/// other classes seed proportionally more synthetics.
pub fn adasyn(data: &LabeledMatrix, cfg: &SamplerConfig) -> Result<LabeledMatrix, BalanceError> {
    adasyn_with_report(data, cfg).map(|(m, _)| m)
}

pub fn adasyn_with_report(
    data: &LabeledMatrix,
    cfg: &SamplerConfig,
) -> Result<(LabeledMatrix, Vec<AdasynClassReport>), BalanceError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(BalanceError::EmptyClass);
    }
    let k = cfg.k_neighbors;
    let classes = data.class_indices();
    let order = synthesis_order(&classes);
    let majority = order[0].1.len();
    for &(class, members) in &order {
        if members.len() < majority {
            check_class_size(class, members, k)?;
        }
    }

    let results: Vec<(Vec<Synthetic>, Option<AdasynClassReport>)> = order
        .iter()
        .map(|&(class, members)| {
            let gap = majority - members.len();
            if gap == 0 {
                return (Vec::new(), None);
            }
            let budget = cfg.beta * gap as f64;
            let target = budget.round() as usize;
            let weights = adasyn_weights(data, class, k);
            let allocation: Vec<usize> = weights.normalized.iter().map(|r| (r * budget).round() as usize).collect();
            let neighbors = same_class_neighbors(data, members, members.to_vec(), k);
            let mut stream = rng::stream(cfg.seed, &["balance", "adasyn", class.as_str()]);
            let make = |base: usize, stream: &mut rng::StreamRng| {
                let slot = stream.random_range(0..k);
                let lambda = stream.random::<f64>();
                Synthetic {
                    base,
                    row: interpolate(data, base, neighbors[&base][slot], lambda),
                }
            };

            let mut synthetics = Vec::with_capacity(target);
            for (&base, &g) in members.iter().zip(&allocation) {
                for _ in 0..g {
                    synthetics.push(make(base, &mut stream));
                }
            }
            if synthetics.len() > target {
                let excess = synthetics.len() - target;
                let mut drop = vec![false; synthetics.len()];
                for i in index::sample(&mut stream, synthetics.len(), excess) {
                    drop[i] = true;
                }
                let mut i = 0;
                synthetics.retain(|_| {
                    i += 1;
                    !drop[i - 1]
                });
            }
            while synthetics.len() < target {
                let base = members[stream.random_range(0..members.len())];
                synthetics.push(make(base, &mut stream));
            }

            let position: HashMap<usize, usize> = members.iter().enumerate().map(|(p, &m)| (m, p)).collect();
            let mut generated = vec![0; members.len()];
            for s in &synthetics {
                generated[position[&s.base]] += 1;
            }
            let report = AdasynClassReport {
                class,
                weights,
                allocation,
                generated,
            };
            (synthetics, Some(report))
        })
        .collect();

    let mut out = data.clone();
    let mut reports = Vec::new();
    for (&(class, _), (synthetics, report)) in order.iter().zip(results) {
        append_synthetics(&mut out, "adasyn", class, &synthetics);
        reports.extend(report);
    }
    Ok((out, reports))
}
