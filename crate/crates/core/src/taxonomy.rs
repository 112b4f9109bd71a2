//! Unified emotion taxonomy and per-dataset label mappings.
//!
//! Every corpus labels its clips with its own vocabulary ("exc", "joy",
//! "ps", ...). A [`LabelMapping`] translates that vocabulary onto the closed
//! [`EmotionLabel`] set, and an [`EmotionSet`] restricts an experiment to the
//! four-, five-, or all-emotion label space.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::UtteranceRecord;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown emotion label `{0}`")]
    UnknownEmotion(String),
    #[error("unknown emotion set `{0}` (expected four, five or all)")]
    UnknownEmotionSet(String),
    #[error("no label mapping registered for dataset `{0}`")]
    UnknownDataset(String),
    #[error("dataset `{dataset}`: native label `{native}` matches {count} rules for the {set} set")]
    AmbiguousMapping {
        dataset: String,
        native: String,
        set: EmotionSetKind,
        count: usize,
    },
    #[error("dataset `{dataset}`: rules {first} and {second} overlap on native label `{native}`")]
    OverlappingRules {
        dataset: String,
        native: String,
        first: usize,
        second: usize,
    },
    #[error("dataset `{dataset}`: rule {index} has an empty native label or no emotion sets")]
    EmptyRule { dataset: String, index: usize },
    #[error("dataset `{dataset}`: native label `{native}` has no mapping rule")]
    UnknownNativeLabel { dataset: String, native: String },
    #[error("duplicate mapping for dataset `{0}`")]
    DuplicateDataset(String),
    #[error("mapping file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! emotion_labels {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// One of the 19 unified emotion classes.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum EmotionLabel {
            $($variant),+
        }

        impl EmotionLabel {
            pub const ALL: [EmotionLabel; 19] = [$(EmotionLabel::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(EmotionLabel::$variant => $name),+
                }
            }
        }

        impl FromStr for EmotionLabel {
            type Err = TaxonomyError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok(EmotionLabel::$variant),)+
                    _ => Err(TaxonomyError::UnknownEmotion(s.to_string())),
                }
            }
        }
    };
}

emotion_labels! {
    Angry => "angry",
    Disgust => "disgust",
    Anxious => "anxious",
    Apologetic => "apologetic",
    Assertive => "assertive",
    Concerned => "concerned",
    Encouraging => "encouraging",
    Excited => "excited",
    Frustrated => "frustrated",
    Fear => "fear",
    Happy => "happy",
    Neutral => "neutral",
    Pain => "pain",
    Sad => "sad",
    Surprised => "surprised",
    Contempt => "contempt",
    Amused => "amused",
    Sleepy => "sleepy",
    Calm => "calm",
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for EmotionLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EmotionLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionSetKind {
    Four,
    Five,
    All,
}

impl EmotionSetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmotionSetKind::Four => "four",
            EmotionSetKind::Five => "five",
            EmotionSetKind::All => "all",
        }
    }
}

impl fmt::Display for EmotionSetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionSetKind {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "four" | "4" => Ok(EmotionSetKind::Four),
            "five" | "5" => Ok(EmotionSetKind::Five),
            "all" | "n" => Ok(EmotionSetKind::All),
            _ => Err(TaxonomyError::UnknownEmotionSet(s.to_string())),
        }
    }
}

/// The label space of one experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmotionSet {
    kind: EmotionSetKind,
    labels: BTreeSet<EmotionLabel>,
}

impl EmotionSet {
    pub fn four() -> Self {
        use EmotionLabel::*;
        EmotionSet {
            kind: EmotionSetKind::Four,
            labels: [Neutral, Angry, Happy, Sad].into_iter().collect(),
        }
    }

    pub fn five() -> Self {
        let mut set = Self::four();
        set.kind = EmotionSetKind::Five;
        set.labels.insert(EmotionLabel::Surprised);
        set
    }

    /// Every unified label; each dataset keeps whichever of them it natively has.
    pub fn all() -> Self {
        EmotionSet {
            kind: EmotionSetKind::All,
            labels: EmotionLabel::ALL.into_iter().collect(),
        }
    }

    pub fn of_kind(kind: EmotionSetKind) -> Self {
        match kind {
            EmotionSetKind::Four => Self::four(),
            EmotionSetKind::Five => Self::five(),
            EmotionSetKind::All => Self::all(),
        }
    }

    pub fn kind(&self) -> EmotionSetKind {
        self.kind
    }

    pub fn labels(&self) -> &BTreeSet<EmotionLabel> {
        &self.labels
    }

    pub fn contains(&self, label: EmotionLabel) -> bool {
        self.labels.contains(&label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRule {
    pub native: String,
    pub unified: EmotionLabel,
    pub sets: Vec<EmotionSetKind>,
}

impl MappingRule {
    fn matches(&self, native: &str, kind: EmotionSetKind) -> bool {
        self.native.trim().eq_ignore_ascii_case(native.trim()) && self.sets.contains(&kind)
    }
}

/// Mapping file document: `{"dataset": id, "rules": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MappingDocument {
    dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    rules: Vec<MappingRule>,
}

/// Validated rule list for one dataset. Construction rejects rules that
/// could both fire for the same native label and emotion set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    dataset_id: String,
    rules: Vec<MappingRule>,
}

impl LabelMapping {
    pub fn new(dataset_id: impl Into<String>, rules: Vec<MappingRule>) -> Result<Self, TaxonomyError> {
        let dataset_id = dataset_id.into();
        for (i, rule) in rules.iter().enumerate() {
            if rule.native.trim().is_empty() || rule.sets.is_empty() {
                return Err(TaxonomyError::EmptyRule {
                    dataset: dataset_id,
                    index: i,
                });
            }
            for (j, earlier) in rules[..i].iter().enumerate() {
                let same_native = earlier.native.trim().eq_ignore_ascii_case(rule.native.trim());
                if same_native && earlier.sets.iter().any(|s| rule.sets.contains(s)) {
                    return Err(TaxonomyError::OverlappingRules {
                        dataset: dataset_id,
                        native: rule.native.clone(),
                        first: j,
                        second: i,
                    });
                }
            }
        }
        Ok(LabelMapping { dataset_id, rules })
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, TaxonomyError> {
        let doc: MappingDocument = serde_json::from_str(text).map_err(|source| TaxonomyError::Parse {
            path: origin.to_string(),
            source,
        })?;
        Self::new(doc.dataset, doc.rules)
    }

    pub fn to_json(&self) -> String {
        let doc = MappingDocument {
            dataset: self.dataset_id.clone(),
            version: Some(1),
            rules: self.rules.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("mapping documents always serialize")
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn rules(&self) -> &[MappingRule] {
        &self.rules
    }

    /// Whether any rule (for any emotion set) knows this native label.
    pub fn knows(&self, native: &str) -> bool {
        self.rules
            .iter()
            .any(|r| r.native.trim().eq_ignore_ascii_case(native.trim()))
    }

    fn lookup(&self, native: &str, kind: EmotionSetKind) -> Result<Option<EmotionLabel>, TaxonomyError> {
        let mut hits = self.rules.iter().filter(|r| r.matches(native, kind));
        let first = hits.next();
        let extra = hits.count();
        if extra > 0 {
            return Err(TaxonomyError::AmbiguousMapping {
                dataset: self.dataset_id.clone(),
                native: native.to_string(),
                set: kind,
                count: extra + 1,
            });
        }
        Ok(first.map(|r| r.unified))
    }
}

const DEFAULT_MAPPINGS: &[(&str, &str)] = &[
    ("asvp-esd.json", include_str!("../mappings/asvp-esd.json")),
    ("crema-d.json", include_str!("../mappings/crema-d.json")),
    ("emofilm.json", include_str!("../mappings/emofilm.json")),
    ("emov-db.json", include_str!("../mappings/emov-db.json")),
    ("esd.json", include_str!("../mappings/esd.json")),
    ("iemocap.json", include_str!("../mappings/iemocap.json")),
    ("jl-corpus.json", include_str!("../mappings/jl-corpus.json")),
    ("meld.json", include_str!("../mappings/meld.json")),
    ("ravdess.json", include_str!("../mappings/ravdess.json")),
    ("savee.json", include_str!("../mappings/savee.json")),
    ("tess.json", include_str!("../mappings/tess.json")),
];

/// All registered dataset mappings.
#[derive(Debug, Clone, Default)]
pub struct Taxonomy {
    mappings: BTreeMap<String, LabelMapping>,
    strict: bool,
}

impl Taxonomy {
    pub fn new() -> Self {
        Self::default()
    }

    /// The mapping files shipped in `mappings/`.
    pub fn with_defaults() -> Self {
        let mut taxonomy = Self::new();
        for (name, text) in DEFAULT_MAPPINGS {
            let mapping = LabelMapping::from_json(text, name).expect("shipped mapping files are valid");
            taxonomy.register(mapping).expect("shipped mapping files are distinct");
        }
        taxonomy
    }

    /// Loads every `*.json` file in `dir`, one dataset per file.
    pub fn load_dir(dir: &Path) -> Result<Self, TaxonomyError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let mut taxonomy = Self::new();
        for path in paths {
            let text = std::fs::read_to_string(&path)?;
            taxonomy.register(LabelMapping::from_json(&text, &path.display().to_string())?)?;
        }
        Ok(taxonomy)
    }

    /// Unknown native labels become errors instead of warnings.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn register(&mut self, mapping: LabelMapping) -> Result<(), TaxonomyError> {
        let id = mapping.dataset_id.clone();
        if self.mappings.contains_key(&id) {
            return Err(TaxonomyError::DuplicateDataset(id));
        }
        self.mappings.insert(id, mapping);
        Ok(())
    }

    pub fn mapping(&self, dataset_id: &str) -> Option<&LabelMapping> {
        self.mappings.get(dataset_id)
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &str> {
        self.mappings.keys().map(String::as_str)
    }

    /// Unified label for `native_label`, or `None` when the record falls
    /// outside `emotion_set`.
    pub fn map_label(
        &self,
        dataset_id: &str,
        native_label: &str,
        emotion_set: &EmotionSet,
    ) -> Result<Option<EmotionLabel>, TaxonomyError> {
        let mapping = self
            .mappings
            .get(dataset_id)
            .ok_or_else(|| TaxonomyError::UnknownDataset(dataset_id.to_string()))?;
        if !mapping.knows(native_label) {
            if self.strict {
                return Err(TaxonomyError::UnknownNativeLabel {
                    dataset: dataset_id.to_string(),
                    native: native_label.to_string(),
                });
            }
            log::warn!(target: "project", "dataset {dataset_id}: no rule for native label `{native_label}`, record excluded");
            return Ok(None);
        }
        Ok(mapping
            .lookup(native_label, emotion_set.kind())?
            .filter(|label| emotion_set.contains(*label)))
    }

    /// Keeps the records whose native label maps into `emotion_set`, with
    /// `unified_label` filled in. Order is preserved.
    pub fn project_manifest(
        &self,
        records: &[UtteranceRecord],
        emotion_set: &EmotionSet,
    ) -> Result<Vec<UtteranceRecord>, TaxonomyError> {
        let mut out = Vec::with_capacity(records.len());
        for record in records {
            if let Some(label) = self.map_label(&record.dataset_id, &record.native_label, emotion_set)? {
                let mut kept = record.clone();
                kept.unified_label = Some(label);
                out.push(kept);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(dataset: &str, native: &str, i: usize) -> UtteranceRecord {
        UtteranceRecord {
            id: format!("{dataset}/{i}.wav"),
            dataset_id: dataset.to_string(),
            speaker_id: "s".into(),
            native_label: native.to_string(),
            unified_label: None,
            duration_s: 3.0,
            language: "en".into(),
            sample_rate_hz: 16_000,
        }
    }

    #[test]
    fn nineteen_labels_round_trip_case_insensitively() {
        let names: BTreeSet<_> = EmotionLabel::ALL.iter().map(|l| l.as_str()).collect();
        assert_eq!(names.len(), 19);
        for label in EmotionLabel::ALL {
            assert_eq!(label.as_str().to_uppercase().parse::<EmotionLabel>().unwrap(), label);
            assert_eq!(serde_json::to_string(&label).unwrap(), format!("\"{}\"", label.as_str()));
        }
        assert!("joy".parse::<EmotionLabel>().is_err());
    }

    #[test]
    fn emotion_sets_nest() {
        let four = EmotionSet::four();
        let five = EmotionSet::five();
        assert_eq!(four.labels().len(), 4);
        assert!(four.labels().is_subset(five.labels()));
        assert_eq!(
            five.labels().difference(four.labels()).copied().collect::<Vec<_>>(),
            vec![EmotionLabel::Surprised]
        );
        assert_eq!(EmotionSet::all().labels().len(), 19);
    }

    #[test]
    fn iemocap_excited_is_happy_for_four_and_five_only() {
        let t = Taxonomy::with_defaults();
        assert_eq!(
            t.map_label("IEMOCAP", "exc", &EmotionSet::four()).unwrap(),
            Some(EmotionLabel::Happy)
        );
        assert_eq!(
            t.map_label("IEMOCAP", "exc", &EmotionSet::five()).unwrap(),
            Some(EmotionLabel::Happy)
        );
        assert_eq!(
            t.map_label("IEMOCAP", "exc", &EmotionSet::all()).unwrap(),
            Some(EmotionLabel::Excited)
        );
    }

    #[test]
    fn labels_outside_the_set_are_absent() {
        let t = Taxonomy::with_defaults();
        assert_eq!(t.map_label("CREMA-D", "disgust", &EmotionSet::four()).unwrap(), None);
        assert_eq!(
            t.map_label("RAVDESS", "calm", &EmotionSet::all()).unwrap(),
            Some(EmotionLabel::Calm)
        );
        assert_eq!(
            t.map_label("MELD", "joy", &EmotionSet::four()).unwrap(),
            Some(EmotionLabel::Happy)
        );
    }

    #[test]
    fn unknown_dataset_and_unknown_native() {
        let t = Taxonomy::with_defaults();
        assert!(matches!(
            t.map_label("NOPE", "angry", &EmotionSet::four()),
            Err(TaxonomyError::UnknownDataset(_))
        ));
        assert_eq!(t.map_label("IEMOCAP", "xxx", &EmotionSet::all()).unwrap(), None);
        let strict = Taxonomy::with_defaults().strict(true);
        assert!(matches!(
            strict.map_label("IEMOCAP", "xxx", &EmotionSet::all()),
            Err(TaxonomyError::UnknownNativeLabel { .. })
        ));
    }

    #[test]
    fn overlapping_rules_are_rejected() {
        let rules = vec![
            MappingRule {
                native: "exc".into(),
                unified: EmotionLabel::Happy,
                sets: vec![EmotionSetKind::Four, EmotionSetKind::All],
            },
            MappingRule {
                native: "EXC".into(),
                unified: EmotionLabel::Excited,
                sets: vec![EmotionSetKind::All],
            },
        ];
        assert!(matches!(
            LabelMapping::new("X", rules),
            Err(TaxonomyError::OverlappingRules { first: 0, second: 1, .. })
        ));
    }

    #[test]
    fn mapping_file_round_trips() {
        let t = Taxonomy::with_defaults();
        let m = t.mapping("IEMOCAP").unwrap();
        let back = LabelMapping::from_json(&m.to_json(), "mem").unwrap();
        assert_eq!(&back, m);
        assert!(LabelMapping::from_json(
            r#"{"dataset":"X","rules":[{"native":"a","unified":"bogus","sets":["four"]}]}"#,
            "mem"
        )
        .is_err());
    }

    #[test]
    fn projection_drops_out_of_set_records() {
        let t = Taxonomy::with_defaults();
        let records = vec![
            record("ASVP-ESD", "happy", 0),
            record("ASVP-ESD", "pain", 1),
            record("CREMA-D", "sad", 2),
        ];
        let out = t.project_manifest(&records, &EmotionSet::four()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].id, records[0].id);
        assert_eq!(out[1].unified_label, Some(EmotionLabel::Sad));
        assert!(t.project_manifest(&[], &EmotionSet::four()).unwrap().is_empty());
    }
}
