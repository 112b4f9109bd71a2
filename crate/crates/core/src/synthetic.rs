//! Seeded stand-ins for the eleven corpora: manifests with realistic speaker
//! structure and class-clustered embeddings, so every stage can run without
//! the licensed audio.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::balancing::LabeledMatrix;
use crate::embedding_store::EmbeddingStore;
use crate::ingestion::{UtteranceRecord, TARGET_RATE_HZ};
use crate::rng;
use crate::taxonomy::{EmotionLabel, EmotionSet, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetProfile {
    pub dataset_id: &'static str,
    pub speakers: usize,
    /// Balanced datasets give every speaker the same total duration;
    /// otherwise one speaker gets three times the speech of the others.
    pub balanced: bool,
}

const fn profile(dataset_id: &'static str, speakers: usize, balanced: bool) -> DatasetProfile {
    DatasetProfile {
        dataset_id,
        speakers,
        balanced,
    }
}

pub const PROFILES: [DatasetProfile; 11] = [
    profile("ESD", 10, true),
    profile("MELD", 12, false),
    profile("IEMOCAP", 10, false),
    profile("CREMA-D", 91, true),
    profile("EmoV-DB", 4, true),
    profile("ASVP-ESD", 8, false),
    profile("TESS", 2, true),
    profile("JL-Corpus", 4, true),
    profile("RAVDESS", 24, true),
    profile("SAVEE", 4, true),
    profile("EmoFilm", 8, true),
];

/// Dataset ids in report row order.
pub fn dataset_order() -> Vec<String> {
    PROFILES.iter().map(|p| p.dataset_id.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    /// Utterances per regular speaker are drawn from this inclusive range.
    pub utterances: (usize, usize),
    /// Caps speaker counts, keeping at least two per dataset.
    pub max_speakers: Option<usize>,
    pub datasets: Option<Vec<String>>,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            utterances: (8, 14),
            max_speakers: None,
            datasets: None,
        }
    }
}

fn natives(taxonomy: &Taxonomy, dataset_id: &str) -> Vec<String> {
    let mapping = taxonomy.mapping(dataset_id).expect("profile datasets ship with mappings");
    let set: BTreeSet<String> = mapping.rules().iter().map(|r| r.native.clone()).collect();
    set.into_iter().collect()
}

/// Manifest over the profiled datasets. Ids look like `DATASET/spkNN/NNNN.wav`.
pub fn synthetic_manifest(seed: u64, opts: &SyntheticOptions) -> Vec<UtteranceRecord> {
    let taxonomy = Taxonomy::with_defaults();
    let mut records = Vec::new();
    for p in PROFILES {
        if opts.datasets.as_ref().is_some_and(|d| !d.iter().any(|x| x == p.dataset_id)) {
            continue;
        }
        let labels = natives(&taxonomy, p.dataset_id);
        let mut stream = rng::stream(seed, &["synthetic-manifest", p.dataset_id]);
        let speakers = opts.max_speakers.map_or(p.speakers, |m| p.speakers.min(m.max(2)));
        let per_speaker = stream.random_range(opts.utterances.0..=opts.utterances.1.max(opts.utterances.0));
        // balanced datasets reuse one duration sequence so speaker totals match exactly
        let durations: Vec<f64> = (0..3 * per_speaker).map(|_| stream.random_range(2.2..8.0)).collect();
        let dominant = stream.random_range(0..speakers);
        for s in 0..speakers {
            let count = if !p.balanced && s == dominant { 3 * per_speaker } else { per_speaker };
            let offset = stream.random_range(0..labels.len());
            for i in 0..count {
                let native = if p.balanced {
                    labels[(i + offset) % labels.len()].clone()
                } else {
                    labels.choose(&mut stream).expect("labels").clone()
                };
                let duration_s = if p.balanced {
                    durations[i]
                } else {
                    stream.random_range(2.2..8.0)
                };
                records.push(UtteranceRecord {
                    id: format!("{}/spk{s:02}/{i:04}.wav", p.dataset_id),
                    dataset_id: p.dataset_id.to_string(),
                    speaker_id: format!("spk{s:02}"),
                    native_label: native,
                    unified_label: None,
                    duration_s,
                    language: "en".into(),
                    sample_rate_hz: TARGET_RATE_HZ,
                });
            }
        }
    }
    records
}

fn gaussian_vector(stream: &mut rng::StreamRng, dim: usize, scale: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, scale).expect("positive scale");
    (0..dim).map(|_| normal.sample(stream)).collect()
}

/// Embeddings shaped as `separation · class centre + dataset offset + noise`.
/// The class is the record's label under the full 19-label set, so the
/// geometry does not depend on which emotion set is projected later.
/// Each vector comes from a stream keyed by its id.
pub fn synthetic_store(records: &[UtteranceRecord], dim: usize, separation: f64, seed: u64) -> EmbeddingStore {
    let taxonomy = Taxonomy::with_defaults();
    let all = EmotionSet::all();
    let mut store = EmbeddingStore::new(dim).expect("positive dim");
    let mut centres = std::collections::HashMap::new();
    let mut offsets = std::collections::HashMap::new();
    for r in records {
        let class = taxonomy
            .map_label(&r.dataset_id, &r.native_label, &all)
            .ok()
            .flatten()
            .map_or_else(|| r.native_label.to_ascii_lowercase(), |l| l.to_string());
        let centre = centres
            .entry(class.clone())
            .or_insert_with(|| gaussian_vector(&mut rng::stream(seed, &["synthetic-centre", &class]), dim, 1.0));
        let offset = offsets.entry(r.dataset_id.clone()).or_insert_with(|| {
            gaussian_vector(&mut rng::stream(seed, &["synthetic-offset", &r.dataset_id]), dim, 0.3)
        });
        let noise = gaussian_vector(&mut rng::stream(seed, &["synthetic-embedding", &r.id]), dim, 0.5);
        let v: Vec<f32> = (0..dim)
            .map(|k| (separation * centre[k] + offset[k] + noise[k]) as f32)
            .collect();
        store.push(r.id.clone(), &v).expect("unique finite vectors");
    }
    store
}

/// Isotropic Gaussian clusters with the given per-class sizes.
pub fn gaussian_clusters(counts: &[(EmotionLabel, usize)], dim: usize, separation: f64, seed: u64) -> LabeledMatrix {
    let mut data = LabeledMatrix::new(dim);
    for &(label, n) in counts {
        let mut stream = rng::stream(seed, &["clusters", label.as_str()]);
        let centre = gaussian_vector(&mut stream, dim, separation);
        let normal = Normal::new(0.0, 1.0).expect("unit variance");
        for i in 0..n {
            let row: Vec<f64> = centre.iter().map(|c| c + normal.sample(&mut stream)).collect();
            data.push(format!("{label}/{i}"), label, &row);
        }
    }
    data
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splits::{select_test_speakers, SplitPolicy};
    use std::collections::BTreeMap;

    #[test]
    fn manifest_covers_profiles_and_is_seeded() {
        let m = synthetic_manifest(3, &SyntheticOptions::default());
        let datasets: BTreeSet<&str> = m.iter().map(|r| r.dataset_id.as_str()).collect();
        assert_eq!(datasets.len(), 11);
        assert_eq!(m, synthetic_manifest(3, &SyntheticOptions::default()));
        assert_ne!(m, synthetic_manifest(4, &SyntheticOptions::default()));
        let speakers: BTreeSet<&str> = m.iter().filter(|r| r.dataset_id == "CREMA-D").map(|r| r.speaker_id.as_str()).collect();
        assert_eq!(speakers.len(), 91);
        let taxonomy = Taxonomy::with_defaults().strict(true);
        assert!(taxonomy.project_manifest(&m, &EmotionSet::all()).is_ok());
    }

    #[test]
    fn unbalanced_profiles_lose_their_dominant_speaker() {
        let m = synthetic_manifest(1, &SyntheticOptions::default());
        let chosen = select_test_speakers(&m, &SplitPolicy::with_seed(1)).unwrap();
        for p in PROFILES.iter().filter(|p| !p.balanced) {
            let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
            for r in m.iter().filter(|r| r.dataset_id == p.dataset_id) {
                *totals.entry(&r.speaker_id).or_default() += r.duration_s;
            }
            let longest = totals.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(&chosen[p.dataset_id], longest);
        }
    }

    #[test]
    fn speaker_cap_and_dataset_filter() {
        let opts = SyntheticOptions {
            max_speakers: Some(3),
            datasets: Some(vec!["RAVDESS".into(), "TESS".into()]),
            ..Default::default()
        };
        let m = synthetic_manifest(0, &opts);
        let speakers: BTreeSet<(&str, &str)> = m.iter().map(|r| (r.dataset_id.as_str(), r.speaker_id.as_str())).collect();
        assert_eq!(speakers.len(), 5);
    }

    #[test]
    fn store_is_order_independent() {
        let m = synthetic_manifest(2, &SyntheticOptions {
            max_speakers: Some(2),
            ..Default::default()
        });
        let a = synthetic_store(&m, 8, 3.0, 9);
        let mut rev = m.clone();
        rev.reverse();
        let b = synthetic_store(&rev, 8, 3.0, 9);
        assert_eq!(a.len(), m.len());
        for r in &m {
            assert_eq!(a.get(&r.id), b.get(&r.id));
        }
    }

    #[test]
    fn cluster_counts() {
        let d = gaussian_clusters(&[(EmotionLabel::Sad, 7), (EmotionLabel::Angry, 3)], 4, 5.0, 0);
        assert_eq!(d.class_counts().into_iter().collect::<Vec<_>>(), vec![(EmotionLabel::Angry, 3), (EmotionLabel::Sad, 7)]);
    }
}
