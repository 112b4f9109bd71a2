use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::audio::{decode_resample, TARGET_RATE_HZ};
use super::{IngestError, UtteranceRecord};

/// How one corpus lays out its files.
///
/// `path_pattern` is matched against the path relative to the dataset root
/// (forward slashes). Its named groups `speaker_id`, `native_label` and
/// `language` fill the record; any group the pattern lacks must come from
/// the `metadata_table` CSV instead (columns `file`, `speaker_id`,
/// `native_label`, `language`, keyed by relative path or file name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRule {
    pub dataset_id: String,
    pub path_pattern: String,
    /// Captured label code -> native label (e.g. RAVDESS "05" -> "angry").
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_codes: BTreeMap<String, String>,
    /// Captured language token -> ISO-639-1 code.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub language_codes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_language: Option<String>,
    /// Records in any other language go to the skip list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_languages: Option<Vec<String>>,
    /// Relative to the dataset root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata_table: Option<PathBuf>,
}

const DEFAULT_ADAPTERS: &[&str] = &[
    include_str!("../../adapters/asvp-esd.json"),
    include_str!("../../adapters/crema-d.json"),
    include_str!("../../adapters/emofilm.json"),
    include_str!("../../adapters/emov-db.json"),
    include_str!("../../adapters/esd.json"),
    include_str!("../../adapters/iemocap.json"),
    include_str!("../../adapters/jl-corpus.json"),
    include_str!("../../adapters/meld.json"),
    include_str!("../../adapters/ravdess.json"),
    include_str!("../../adapters/savee.json"),
    include_str!("../../adapters/tess.json"),
];

impl AdapterRule {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| IngestError::AdapterParse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// The adapter shipped in `adapters/` for `dataset_id`.
    pub fn builtin(dataset_id: &str) -> Option<Self> {
        Self::builtins().into_iter().find(|a| a.dataset_id == dataset_id)
    }

    pub fn builtins() -> Vec<Self> {
        DEFAULT_ADAPTERS
            .iter()
            .map(|text| serde_json::from_str(text).expect("shipped adapters are valid"))
            .collect()
    }

    /// Applies the pattern to one relative path. `None` when it does not match.
    pub fn captures(&self, relative: &str) -> Result<Option<Captured>, IngestError> {
        let regex = self.regex()?;
        Ok(regex.captures(relative).map(|caps| self.extract(&caps)))
    }

    fn extract(&self, caps: &regex::Captures<'_>) -> Captured {
        let group = |name: &str| caps.name(name).map(|m| m.as_str().to_string());
        Captured {
            speaker_id: group("speaker_id"),
            native_label: group("native_label").map(|code| self.label_codes.get(&code).cloned().unwrap_or(code)),
            language: group("language").map(|tok| self.language_codes.get(&tok).cloned().unwrap_or(tok)),
        }
    }

    fn regex(&self) -> Result<Regex, IngestError> {
        Regex::new(&self.path_pattern).map_err(|e| IngestError::Pattern(format!("{}: {e}", self.dataset_id)))
    }

    fn check_groups(&self, regex: &Regex) -> Result<(), IngestError> {
        if self.metadata_table.is_some() {
            return Ok(());
        }
        let names: Vec<_> = regex.capture_names().flatten().collect();
        for required in ["speaker_id", "native_label"] {
            if !names.contains(&required) {
                return Err(IngestError::Pattern(format!(
                    "{}: pattern has no `{required}` group and no metadata table is configured",
                    self.dataset_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Captured {
    pub speaker_id: Option<String>,
    pub native_label: Option<String>,
    pub language: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ScanOutcome {
    pub records: Vec<UtteranceRecord>,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Debug, Deserialize)]
struct MetadataRow {
    file: String,
    #[serde(default)]
    speaker_id: Option<String>,
    #[serde(default)]
    native_label: Option<String>,
    #[serde(default)]
    language: Option<String>,
}

fn load_metadata(path: &Path) -> Result<HashMap<String, MetadataRow>, IngestError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| IngestError::Metadata {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut rows = HashMap::new();
    for row in reader.deserialize::<MetadataRow>() {
        let row = row.map_err(|e| IngestError::Metadata {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        rows.insert(row.file.replace('\\', "/"), row);
    }
    Ok(rows)
}

enum FileVerdict {
    Keep(UtteranceRecord),
    Skip(SkippedFile),
}

/// Walks `root`, emitting one record per file the adapter accepts. Files
/// are visited in sorted path order; decoding runs in parallel but results
/// are merged in that same order.
pub fn scan_dataset(root: &Path, rule: &AdapterRule) -> Result<ScanOutcome, IngestError> {
    let regex = rule.regex()?;
    rule.check_groups(&regex)?;
    let meta_path = rule.metadata_table.as_ref().map(|p| root.join(p));
    let metadata = match &meta_path {
        Some(p) => Some(load_metadata(p)?),
        None => None,
    };

    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            IngestError::Io {
                path,
                source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")),
            }
        })?;
        if !entry.file_type().is_file() || Some(entry.path()) == meta_path.as_deref() {
            continue;
        }
        let relative = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        files.push((relative, entry.into_path()));
    }
    files.sort();

    let verdicts: Vec<Result<FileVerdict, IngestError>> = files
        .par_iter()
        .map(|(relative, path)| classify(rule, &regex, metadata.as_ref(), relative, path))
        .collect();

    let mut outcome = ScanOutcome::default();
    for verdict in verdicts {
        match verdict? {
            FileVerdict::Keep(record) => outcome.records.push(record),
            FileVerdict::Skip(skip) => outcome.skipped.push(skip),
        }
    }
    Ok(outcome)
}

fn classify(
    rule: &AdapterRule,
    regex: &Regex,
    metadata: Option<&HashMap<String, MetadataRow>>,
    relative: &str,
    path: &Path,
) -> Result<FileVerdict, IngestError> {
    let skip = |reason: String| {
        Ok(FileVerdict::Skip(SkippedFile {
            path: relative.to_string(),
            reason,
        }))
    };
    let Some(caps) = regex.captures(relative) else {
        return skip("no matching rule".into());
    };
    let Captured {
        speaker_id: mut speaker,
        native_label: mut native,
        mut language,
    } = rule.extract(&caps);

    if let Some(table) = metadata {
        let file_name = relative.rsplit('/').next().unwrap_or(relative);
        let Some(row) = table.get(relative).or_else(|| table.get(file_name)) else {
            return skip("no metadata row".into());
        };
        speaker = speaker.or_else(|| row.speaker_id.clone());
        native = native.or_else(|| {
            row.native_label
                .as_ref()
                .map(|code| rule.label_codes.get(code).cloned().unwrap_or_else(|| code.clone()))
        });
        language = language.or_else(|| row.language.clone());
    }

    let speaker = speaker.filter(|s| !s.is_empty());
    let native = native.filter(|s| !s.trim().is_empty());
    let (Some(speaker_id), Some(native_label)) = (speaker, native) else {
        return skip("missing speaker or label".into());
    };
    let language = language
        .or_else(|| rule.default_language.clone())
        .unwrap_or_else(|| "und".to_string())
        .to_ascii_lowercase();
    if let Some(keep) = &rule.keep_languages {
        if !keep.iter().any(|l| l.eq_ignore_ascii_case(&language)) {
            return skip(format!("language `{language}` filtered"));
        }
    }

    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let samples = match decode_resample(&bytes, TARGET_RATE_HZ) {
        Ok(s) if !s.is_empty() => s,
        Ok(_) => return skip("empty audio".into()),
        Err(e) => return skip(format!("undecodable: {e}")),
    };
    Ok(FileVerdict::Keep(UtteranceRecord {
        id: format!("{}/{relative}", rule.dataset_id),
        dataset_id: rule.dataset_id.clone(),
        speaker_id,
        native_label,
        unified_label: None,
        duration_s: samples.len() as f64 / f64::from(TARGET_RATE_HZ),
        language,
        sample_rate_hz: TARGET_RATE_HZ,
    }))
}

/// Writes `<manifest>.skipped` as tab-separated `path<TAB>reason` lines.
pub fn write_skip_list(manifest_path: &Path, skipped: &[SkippedFile]) -> Result<PathBuf, IngestError> {
    let mut name = manifest_path.as_os_str().to_owned();
    name.push(".skipped");
    let path = PathBuf::from(name);
    let file = File::create(&path).map_err(|e| IngestError::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for s in skipped {
        writeln!(out, "{}\t{}", s.path, s.reason).map_err(|e| IngestError::io(&path, e))?;
    }
    out.flush().map_err(|e| IngestError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::audio::{encode_wav, WavFormat};

    fn write_clip(root: &Path, relative: &str, seconds: f64, rate: u32) {
        let path = root.join(relative);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let n = (seconds * f64::from(rate)) as usize;
        let samples: Vec<f64> = (0..n).map(|i| 0.1 * ((i % 50) as f64 / 50.0 - 0.5)).collect();
        std::fs::write(path, encode_wav(&samples, rate, 1, WavFormat::Int(16))).unwrap();
    }

    #[test]
    fn ravdess_filename_coding() {
        // modality-channel-emotion-intensity-statement-repetition-actor
        let rule = AdapterRule::builtin("RAVDESS").unwrap();
        let caps = rule.captures("Actor_12/03-01-05-01-02-01-12.wav").unwrap().unwrap();
        assert_eq!(caps.speaker_id.as_deref(), Some("12"));
        assert_eq!(caps.native_label.as_deref(), Some("angry"));
        let calm = rule.captures("03-01-02-02-01-02-07.wav").unwrap().unwrap();
        assert_eq!(calm.native_label.as_deref(), Some("calm"));
        // song (vocal channel 02) and video-only modality are not speech audio
        assert!(rule.captures("03-02-05-01-02-01-12.wav").unwrap().is_none());
        assert!(rule.captures("02-01-05-01-02-01-12.wav").unwrap().is_none());
    }

    #[test]
    fn other_builtin_patterns() {
        let crema = AdapterRule::builtin("CREMA-D").unwrap();
        let c = crema.captures("AudioWAV/1001_DFA_ANG_XX.wav").unwrap().unwrap();
        assert_eq!((c.speaker_id.as_deref(), c.native_label.as_deref()), (Some("1001"), Some("angry")));
        let tess = AdapterRule::builtin("TESS").unwrap();
        let t = tess.captures("OAF_back_ps.wav").unwrap().unwrap();
        assert_eq!((t.speaker_id.as_deref(), t.native_label.as_deref()), (Some("OAF"), Some("ps")));
        let savee = AdapterRule::builtin("SAVEE").unwrap();
        let s = savee.captures("JK_sa03.wav").unwrap().unwrap();
        assert_eq!(s.native_label.as_deref(), Some("sad"));
        let esd = AdapterRule::builtin("ESD").unwrap();
        let zh = esd.captures("0003/Angry/0003_000351.wav").unwrap().unwrap();
        assert_eq!(zh.language.as_deref(), Some("zh"));
        let en = esd.captures("0015/Surprise/0015_001401.wav").unwrap().unwrap();
        assert_eq!(en.language.as_deref(), Some("en"));
        assert_eq!(AdapterRule::builtins().len(), 11);
    }

    #[test]
    fn empty_directory_scans_to_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = scan_dataset(dir.path(), &AdapterRule::builtin("RAVDESS").unwrap()).unwrap();
        assert!(out.records.is_empty() && out.skipped.is_empty());
    }

    #[test]
    fn unmatched_and_filtered_files_land_in_skip_list() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "0012/Happy/0012_000001.wav", 2.5, 16_000);
        write_clip(dir.path(), "0002/Happy/0002_000001.wav", 2.5, 16_000);
        write_clip(dir.path(), "readme.wav", 1.0, 16_000);
        let out = scan_dataset(dir.path(), &AdapterRule::builtin("ESD").unwrap()).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.id, "ESD/0012/Happy/0012_000001.wav");
        assert_eq!((r.speaker_id.as_str(), r.native_label.as_str()), ("0012", "Happy"));
        assert_eq!(r.language, "en");
        let skipped: Vec<_> = out.skipped.iter().map(|s| s.path.as_str()).collect();
        assert_eq!(skipped, vec!["0002/Happy/0002_000001.wav", "readme.wav"]);
    }

    #[test]
    fn durations_come_from_resampled_audio() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "03-01-05-01-02-01-12.wav", 2.0, 48_000);
        write_clip(dir.path(), "03-01-04-01-02-01-03.wav", 3.3, 44_100);
        let out = scan_dataset(dir.path(), &AdapterRule::builtin("RAVDESS").unwrap()).unwrap();
        assert_eq!(out.records.len(), 2);
        for r in &out.records {
            assert_eq!(r.sample_rate_hz, 16_000);
            let samples = decode_resample(&std::fs::read(dir.path().join(&r.id["RAVDESS/".len()..])).unwrap(), 16_000)
                .unwrap()
                .len();
            assert!((r.duration_s - samples as f64 / 16_000.0).abs() <= 1.0 / 16_000.0);
        }
        assert!((out.records[0].duration_s - 3.3).abs() < 1e-3);
    }

    #[test]
    fn metadata_table_supplies_fields() {
        let dir = tempfile::tempdir().unwrap();
        write_clip(dir.path(), "Session1/a.wav", 2.2, 16_000);
        write_clip(dir.path(), "Session1/b.wav", 2.2, 16_000);
        std::fs::write(
            dir.path().join("iemocap_labels.csv"),
            "file,speaker_id,native_label\nSession1/a.wav,Ses01F,exc\n",
        )
        .unwrap();
        let out = scan_dataset(dir.path(), &AdapterRule::builtin("IEMOCAP").unwrap()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].native_label, "exc");
        assert_eq!(out.skipped, vec![SkippedFile { path: "Session1/b.wav".into(), reason: "no metadata row".into() }]);
    }

    #[test]
    fn missing_capture_group_is_a_pattern_error() {
        let rule = AdapterRule {
            dataset_id: "X".into(),
            path_pattern: r"(?P<speaker_id>\w+)\.wav$".into(),
            label_codes: BTreeMap::new(),
            language_codes: BTreeMap::new(),
            default_language: None,
            keep_languages: None,
            metadata_table: None,
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_dataset(dir.path(), &rule), Err(IngestError::Pattern(_))));
    }

    #[test]
    fn skip_list_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("x.jsonl");
        let path = write_skip_list(
            &manifest,
            &[SkippedFile { path: "a.wav".into(), reason: "no matching rule".into() }],
        )
        .unwrap();
        assert_eq!(path, dir.path().join("x.jsonl.skipped"));
        assert_eq!(std::fs::read_to_string(path).unwrap(), "a.wav\tno matching rule\n");
    }
}
