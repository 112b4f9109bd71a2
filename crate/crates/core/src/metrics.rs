//! Accuracy metrics, the JSONL results ledger and the results grid.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balancing::SamplingMethod;
use crate::taxonomy::{EmotionLabel, EmotionSetKind};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no predictions")]
    EmptyResult,
    #[error("expected {expected} fold results, got {got}")]
    FoldCountMismatch { expected: usize, got: usize },
    #[error("fold result scope is {0:?}, expected speaker_out_test")]
    WrongScope(Scope),
    #[error("weighted accuracy {weighted} disagrees with accuracy {plain}")]
    InconsistentAccuracy { plain: f64, weighted: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Validation,
    SpeakerOutTest,
    /// Non-training remainder of a dataset trained on a fraction of its data.
    ExtraTest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub predicted: EmotionLabel,
    pub truth: EmotionLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldResult {
    pub dataset_id: String,
    pub fold_index: usize,
    pub scope: Scope,
    pub predictions: Vec<Prediction>,
}

impl FoldResult {
    pub fn correct(&self) -> usize {
        self.predictions.iter().filter(|p| p.predicted == p.truth).count()
    }
}

pub fn accuracy(result: &FoldResult) -> Result<f64, MetricsError> {
    if result.predictions.is_empty() {
        return Err(MetricsError::EmptyResult);
    }
    Ok(result.correct() as f64 / result.predictions.len() as f64)
}

/// Support-weighted mean of per-class recall, `Σ_c (n_c / N) · recall_c`.
pub fn weighted_accuracy(result: &FoldResult) -> Result<f64, MetricsError> {
    if result.predictions.is_empty() {
        return Err(MetricsError::EmptyResult);
    }
    let mut support: BTreeMap<EmotionLabel, (usize, usize)> = BTreeMap::new();
    for p in &result.predictions {
        let entry = support.entry(p.truth).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += usize::from(p.predicted == p.truth);
    }
    let total = result.predictions.len() as f64;
    Ok(support
        .values()
        .map(|&(n, hit)| (n as f64 / total) * (hit as f64 / n as f64))
        .sum())
}

/// Accuracy after confirming it matches the weighted form within 1e-12.
pub fn checked_accuracy(result: &FoldResult) -> Result<f64, MetricsError> {
    let plain = accuracy(result)?;
    let weighted = weighted_accuracy(result)?;
    if (plain - weighted).abs() > 1e-12 {
        return Err(MetricsError::InconsistentAccuracy { plain, weighted });
    }
    Ok(plain)
}

/// Size-weighted mean of `(test size, accuracy)` pairs.
pub fn size_weighted_mean(parts: &[(usize, f64)]) -> Result<f64, MetricsError> {
    let total: usize = parts.iter().map(|p| p.0).sum();
    if total == 0 {
        return Err(MetricsError::EmptyResult);
    }
    Ok(parts.iter().map(|&(n, a)| n as f64 * a).sum::<f64>() / total as f64)
}

/// Speaker-out test accuracy averaged over folds, weighted by fold test size.
/// `expected_folds` is the dataset's actual fold count.
pub fn aggregate_speaker_out(results: &[FoldResult], expected_folds: usize) -> Result<f64, MetricsError> {
    if results.len() != expected_folds {
        return Err(MetricsError::FoldCountMismatch {
            expected: expected_folds,
            got: results.len(),
        });
    }
    if let Some(r) = results.iter().find(|r| r.scope != Scope::SpeakerOutTest) {
        return Err(MetricsError::WrongScope(r.scope));
    }
    let parts = results
        .iter()
        .map(|r| Ok((r.predictions.len(), checked_accuracy(r)?)))
        .collect::<Result<Vec<_>, MetricsError>>()?;
    size_weighted_mean(&parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeKind {
    Combined,
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridColumn {
    pub emotion_set: EmotionSetKind,
    pub regime: RegimeKind,
    pub sampling: SamplingMethod,
}

/// One line of the results ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub experiment_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub emotion_set: EmotionSetKind,
    pub regime: RegimeKind,
    pub sampling: SamplingMethod,
    pub dataset_id: String,
    pub fold_index: usize,
    pub fold_count: usize,
    pub scope: Scope,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub weighted_accuracy: f64,
}

impl LedgerRecord {
    pub fn column(&self) -> GridColumn {
        GridColumn {
            emotion_set: self.emotion_set,
            regime: self.regime,
            sampling: self.sampling,
        }
    }
}

pub fn write_ledger(path: &Path, records: &[LedgerRecord]) -> Result<(), MetricsError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| MetricsError::Parse(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRecord>, MetricsError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| MetricsError::Parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(records)
}

/// Percent value stored in exact hundredths so rendering and averaging agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Percent(i64);

impl Percent {
    pub fn from_fraction(accuracy: f64) -> Self {
        Percent((accuracy * 10_000.0).round() as i64)
    }

    pub fn from_percent(value: f64) -> Self {
        Percent((value * 100.0).round() as i64)
    }

    pub fn hundredths(self) -> i64 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Unweighted mean, rounded half away from zero to the nearest hundredth.
    pub fn mean(values: &[Percent]) -> Option<Percent> {
        if values.is_empty() {
            return None;
        }
        let sum: i64 = values.iter().map(|p| p.0).sum();
        let n = values.len() as i64;
        let rounded = (2 * sum.abs() + n) / (2 * n);
        Some(Percent(if sum < 0 { -rounded } else { rounded }))
    }
}

impl std::fmt::Display for Percent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        write!(f, "{sign}{}.{:02}", self.0.abs() / 100, self.0.abs() % 100)
    }
}

const ABSENT: &str = "-";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for GridFormat {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(GridFormat::Markdown),
            "csv" => Ok(GridFormat::Csv),
            other => Err(MetricsError::Parse(format!("unknown grid format `{other}`"))),
        }
    }
}

/// Rows are datasets plus a trailing mean row; columns are grouped by
/// emotion set as "Emo. No.", the combined-training sampling columns
/// DS, UN, SM, AD, then separate training ("Tr. Sep.", suffixed with the
/// sampling code unless no sampling was applied).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentGrid {
    datasets: Vec<String>,
    cells: BTreeMap<(String, GridColumn), Percent>,
    class_counts: BTreeMap<(String, EmotionSetKind), usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Slot {
    ClassCount(EmotionSetKind),
    Cell(GridColumn),
}

const SET_ORDER: [EmotionSetKind; 3] = [EmotionSetKind::Four, EmotionSetKind::Five, EmotionSetKind::All];

fn set_title(kind: EmotionSetKind) -> &'static str {
    match kind {
        EmotionSetKind::Four => "4-Emotions",
        EmotionSetKind::Five => "5-Emotions",
        EmotionSetKind::All => "N-Emotions",
    }
}

impl ExperimentGrid {
    pub fn new(datasets: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ExperimentGrid {
            datasets: datasets.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    fn ensure_row(&mut self, dataset: &str) {
        if !self.datasets.iter().any(|d| d == dataset) {
            self.datasets.push(dataset.to_string());
        }
    }

    pub fn set(&mut self, dataset: &str, column: GridColumn, value: Percent) {
        self.ensure_row(dataset);
        self.cells.insert((dataset.to_string(), column), value);
    }

    pub fn set_class_count(&mut self, dataset: &str, set: EmotionSetKind, count: usize) {
        self.ensure_row(dataset);
        self.class_counts.insert((dataset.to_string(), set), count);
    }

    pub fn get(&self, dataset: &str, column: GridColumn) -> Option<Percent> {
        self.cells.get(&(dataset.to_string(), column)).copied()
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    /// Mean over the datasets that have the cell.
    pub fn column_mean(&self, column: GridColumn) -> Option<Percent> {
        let values: Vec<Percent> = self.datasets.iter().filter_map(|d| self.get(d, column)).collect();
        Percent::mean(&values)
    }

    /// Builds cells from speaker-out test records, size-weighted across folds.
    pub fn from_ledger(records: &[LedgerRecord], dataset_order: &[String]) -> Result<Self, MetricsError> {
        let mut grid = ExperimentGrid::new(dataset_order.iter().cloned());
        let mut groups: BTreeMap<(String, GridColumn), Vec<&LedgerRecord>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.scope == Scope::SpeakerOutTest) {
            groups.entry((r.dataset_id.clone(), r.column())).or_default().push(r);
        }
        for ((dataset, column), group) in groups {
            let expected = group[0].fold_count;
            let folds: BTreeSet<usize> = group.iter().map(|r| r.fold_index).collect();
            if folds.len() != expected || group.len() != expected {
                return Err(MetricsError::FoldCountMismatch {
                    expected,
                    got: group.len(),
                });
            }
            let parts: Vec<(usize, f64)> = group.iter().map(|r| (r.n, r.accuracy)).collect();
            grid.set(&dataset, column, Percent::from_fraction(size_weighted_mean(&parts)?));
        }
        Ok(grid)
    }

    fn slots(&self) -> Vec<Slot> {
        let mut slots = Vec::new();
        for set in SET_ORDER {
            let present: BTreeSet<GridColumn> =
                self.cells.keys().map(|(_, c)| *c).filter(|c| c.emotion_set == set).collect();
            let has_counts = self.class_counts.keys().any(|(_, s)| *s == set);
            if present.is_empty() && !has_counts {
                continue;
            }
            slots.push(Slot::ClassCount(set));
            if present.iter().any(|c| c.regime == RegimeKind::Combined) {
                for sampling in SamplingMethod::ALL {
                    slots.push(Slot::Cell(GridColumn {
                        emotion_set: set,
                        regime: RegimeKind::Combined,
                        sampling,
                    }));
                }
            }
            for sampling in SamplingMethod::ALL {
                let column = GridColumn {
                    emotion_set: set,
                    regime: RegimeKind::Separate,
                    sampling,
                };
                if present.contains(&column) {
                    slots.push(Slot::Cell(column));
                }
            }
        }
        slots
    }

    fn header(&self, slots: &[Slot]) -> Vec<String> {
        let mut header = vec!["Dataset".to_string()];
        for slot in slots {
            header.push(match slot {
                Slot::ClassCount(set) => format!("{} Emo. No.", set_title(*set)),
                Slot::Cell(c) => match (c.regime, c.sampling) {
                    (RegimeKind::Combined, s) => format!("{} {}", set_title(c.emotion_set), s.code()),
                    (RegimeKind::Separate, SamplingMethod::None) => format!("{} Tr. Sep.", set_title(c.emotion_set)),
                    (RegimeKind::Separate, s) => format!("{} Tr. Sep. {}", set_title(c.emotion_set), s.code()),
                },
            });
        }
        header
    }

    fn rows(&self, slots: &[Slot]) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for dataset in &self.datasets {
            let mut row = vec![dataset.clone()];
            for slot in slots {
                row.push(match slot {
                    Slot::ClassCount(set) => self
                        .class_counts
                        .get(&(dataset.clone(), *set))
                        .map(|n| n.to_string())
                        .unwrap_or_else(|| ABSENT.into()),
                    Slot::Cell(c) => self.get(dataset, *c).map(|p| p.to_string()).unwrap_or_else(|| ABSENT.into()),
                });
            }
            rows.push(row);
        }
        let mut mean = vec!["Mean".to_string()];
        for slot in slots {
            mean.push(match slot {
                Slot::ClassCount(_) => ABSENT.into(),
                Slot::Cell(c) => self.column_mean(*c).map(|p| p.to_string()).unwrap_or_else(|| ABSENT.into()),
            });
        }
        rows.push(mean);
        rows
    }

    /// Renders the grid; a config hash, when given, is appended as a markdown footer.
    pub fn render(&self, format: GridFormat, config_hash: Option<&str>) -> String {
        let slots = self.slots();
        let header = self.header(&slots);
        let rows = self.rows(&slots);
        match format {
            GridFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&header).expect("in-memory write");
                for row in &rows {
                    w.write_record(row).expect("in-memory write");
                }
                String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
            }
            GridFormat::Markdown => {
                let mut out = String::new();
                out.push_str(&format!("| {} |\n", header.join(" | ")));
                let rule: Vec<&str> = header.iter().enumerate().map(|(i, _)| if i == 0 { "---" } else { "---:" }).collect();
                out.push_str(&format!("| {} |\n", rule.join(" | ")));
                for row in &rows {
                    out.push_str(&format!("| {} |\n", row.join(" | ")));
                }
                if let Some(hash) = config_hash {
                    out.push_str(&format!("\nconfig hash: `{hash}`\n"));
                }
                out
            }
        }
    }

    /// Reads back the cells of a CSV rendering. The mean row is skipped.
    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| MetricsError::Parse(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let slots: Vec<Option<Slot>> = header.iter().skip(1).map(|h| parse_header(h)).collect::<Result<_, _>>()?;
        let mut grid = ExperimentGrid::default();
        for record in reader.records() {
            let record = record.map_err(|e| MetricsError::Parse(e.to_string()))?;
            let dataset = record.get(0).unwrap_or_default().to_string();
            if dataset == "Mean" {
                continue;
            }
            grid.ensure_row(&dataset);
            for (slot, field) in slots.iter().zip(record.iter().skip(1)) {
                if field == ABSENT {
                    continue;
                }
                let bad = |_| MetricsError::Parse(format!("bad cell `{field}` for {dataset}"));
                match slot {
                    Some(Slot::ClassCount(set)) => grid.set_class_count(&dataset, *set, field.parse().map_err(bad)?),
                    Some(Slot::Cell(c)) => {
                        let v: f64 = field.parse().map_err(|_| MetricsError::Parse(format!("bad cell `{field}`")))?;
                        grid.set(&dataset, *c, Percent::from_percent(v));
                    }
                    None => {}
                }
            }
        }
        Ok(grid)
    }
}

fn parse_header(h: &str) -> Result<Option<Slot>, MetricsError> {
    let bad = || MetricsError::Parse(format!("unknown grid column `{h}`"));
    let (title, rest) = h.split_once(' ').ok_or_else(bad)?;
    let set = SET_ORDER.into_iter().find(|s| set_title(*s) == title).ok_or_else(bad)?;
    if rest == "Emo. No." {
        return Ok(Some(Slot::ClassCount(set)));
    }
    let (regime, code) = match rest.strip_prefix("Tr. Sep.") {
        Some("") => (RegimeKind::Separate, None),
        Some(code) => (RegimeKind::Separate, Some(code.trim())),
        None => (RegimeKind::Combined, Some(rest)),
    };
    let sampling = match code {
        Some(code) => code.parse().map_err(|_| bad())?,
        None => SamplingMethod::None,
    };
    Ok(Some(Slot::Cell(GridColumn {
        emotion_set: set,
        regime,
        sampling,
    })))
}
