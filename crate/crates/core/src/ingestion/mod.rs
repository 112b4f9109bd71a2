//! Manifest construction: utterance records, dataset adapters, audio
//! decoding and the clip-duration filter.

mod adapter;
pub mod audio;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::EmotionLabel;

pub use adapter::{scan_dataset, write_skip_list, AdapterRule, ScanOutcome, SkippedFile};
pub use audio::{decode_resample, AudioError, Resampler, TARGET_RATE_HZ};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("adapter pattern error: {0}")]
    Pattern(String),
    #[error("adapter file {path}: {source}")]
    AdapterParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("metadata table {path}: {message}")]
    Metadata { path: PathBuf, message: String },
    #[error("manifest {path} line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("manifest {path} line {line}: duplicate id `{id}`")]
    DuplicateId { path: PathBuf, line: usize, id: String },
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One audio clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    /// `dataset_id + "/" + relative path`.
    pub id: String,
    pub dataset_id: String,
    pub speaker_id: String,
    pub native_label: String,
    pub unified_label: Option<EmotionLabel>,
    pub duration_s: f64,
    pub language: String,
    pub sample_rate_hz: u32,
}

/// Inclusive clip-duration bounds in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationBounds {
    pub min_s: f64,
    pub max_s: f64,
}

impl Default for DurationBounds {
    fn default() -> Self {
        DurationBounds { min_s: 2.0, max_s: 13.0 }
    }
}

pub fn duration_filter(records: &[UtteranceRecord], bounds: DurationBounds) -> Vec<UtteranceRecord> {
    records
        .iter()
        .filter(|r| r.duration_s >= bounds.min_s && r.duration_s <= bounds.max_s)
        .cloned()
        .collect()
}

/// Reads a JSON Lines manifest, rejecting duplicate ids and non-positive durations.
pub fn read_manifest(path: &Path) -> Result<Vec<UtteranceRecord>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord = serde_json::from_str(&line).map_err(|e| IngestError::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !(record.duration_s > 0.0 && record.duration_s.is_finite()) {
            return Err(IngestError::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duration_s must be positive, got {}", record.duration_s),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(IngestError::DuplicateId {
                path: path.to_path_buf(),
                line: i + 1,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[UtteranceRecord]) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("records always serialize");
        writeln!(out, "{line}").map_err(|e| IngestError::io(path, e))?;
    }
    out.flush().map_err(|e| IngestError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, duration_s: f64) -> UtteranceRecord {
        UtteranceRecord {
            id: id.into(),
            dataset_id: "D".into(),
            speaker_id: "s".into(),
            native_label: "angry".into(),
            unified_label: None,
            duration_s,
            language: "en".into(),
            sample_rate_hz: 16_000,
        }
    }

    #[test]
    fn duration_bounds_are_inclusive() {
        let records: Vec<_> = [1.9, 2.0, 7.5, 13.0, 13.01]
            .iter()
            .enumerate()
            .map(|(i, &d)| rec(&i.to_string(), d))
            .collect();
        let kept: Vec<f64> = duration_filter(&records, DurationBounds::default())
            .iter()
            .map(|r| r.duration_s)
            .collect();
        assert_eq!(kept, vec![2.0, 7.5, 13.0]);
        assert!(duration_filter(&[], DurationBounds::default()).is_empty());
        let inside = vec![rec("a", 3.0), rec("b", 12.0)];
        assert_eq!(duration_filter(&inside, DurationBounds::default()), inside);
    }

    #[test]
    fn manifest_round_trip_and_duplicate_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut records = vec![rec("D/a.wav", 2.5), rec("D/b.wav", 4.0)];
        records[1].unified_label = Some(EmotionLabel::Angry);
        write_manifest(&path, &records).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), records);

        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.contains("\"unified_label\":null"));
        std::fs::write(&path, format!("{first}\n{first}\n")).unwrap();
        assert!(matches!(read_manifest(&path), Err(IngestError::DuplicateId { line: 2, .. })));
    }
}
