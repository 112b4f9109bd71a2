use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use proptest::prelude::*;

use ser_toolkit::balancing::{resample, LabeledMatrix, SamplerConfig, SamplingMethod};
use ser_toolkit::classifier::{model_from_checkpoint_bytes, softmax_rows, Mlp};
use ser_toolkit::embedding_store::EmbeddingStore;
use ser_toolkit::ingestion::Resampler;
use ser_toolkit::metrics::{ExperimentGrid, GridColumn, GridFormat, Percent, RegimeKind};
use ser_toolkit::splits::{audit_plan, plan_combined, plan_separate, SplitPlan, SplitPolicy};
use ser_toolkit::{EmotionLabel, EmotionSetKind, UtteranceRecord};

const LABELS: [EmotionLabel; 4] = [EmotionLabel::Neutral, EmotionLabel::Angry, EmotionLabel::Happy, EmotionLabel::Sad];

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(f32::from_bits).prop_filter("finite", |v| v.is_finite())
}

fn store_strategy() -> impl Strategy<Value = (usize, Vec<Vec<f32>>)> {
    (1usize..16).prop_flat_map(|dim| (Just(dim), prop::collection::vec(prop::collection::vec(finite_f32(), dim), 0..20)))
}

/// Per-dataset speaker lists of (clip count, clip duration).
fn manifest_strategy() -> impl Strategy<Value = Vec<UtteranceRecord>> {
    prop::collection::vec(prop::collection::vec((1usize..12, 2.0f64..9.0), 2..9), 2..5).prop_map(|datasets| {
        let mut out = Vec::new();
        for (d, speakers) in datasets.iter().enumerate() {
            for (s, &(clips, dur)) in speakers.iter().enumerate() {
                for c in 0..clips {
                    out.push(UtteranceRecord {
                        id: format!("D{d}/s{s}/{c}.wav"),
                        dataset_id: format!("D{d}"),
                        speaker_id: format!("s{s}"),
                        native_label: "x".into(),
                        unified_label: Some(LABELS[(c + s) % 4]),
                        duration_s: dur,
                        language: "en".into(),
                        sample_rate_hz: 16_000,
                    });
                }
            }
        }
        out
    })
}

fn labeled(rows: &[(usize, [i16; 3])]) -> LabeledMatrix {
    let mut m = LabeledMatrix::new(3);
    for (i, (c, r)) in rows.iter().enumerate() {
        let jitter = i as f64 * 1e-3;
        m.push(format!("r{i}"), LABELS[*c], &[f64::from(r[0]) + jitter, f64::from(r[1]), f64::from(r[2])]);
    }
    m
}

fn class_rows() -> impl Strategy<Value = Vec<(usize, [i16; 3])>> {
    // at least 7 rows per class so k = 5 neighbours always exist
    prop::collection::vec((0usize..3, any::<[i16; 3]>()), 0..40).prop_map(|mut extra| {
        for c in 0..3 {
            for j in 0..7 {
                extra.push((c, [c as i16 * 50 + j, j, -j]));
            }
        }
        extra
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn store_bytes_round_trip((dim, vectors) in store_strategy()) {
        let mut store = EmbeddingStore::new(dim).unwrap();
        for (i, v) in vectors.iter().enumerate() {
            store.push(format!("u{i}"), v).unwrap();
        }
        let bytes = store.to_bytes();
        prop_assert_eq!(bytes.len(), store.encoded_len());
        let back = EmbeddingStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.to_bytes(), &bytes);
        for cut in [bytes.len().saturating_sub(1), bytes.len() / 2] {
            if cut < bytes.len() {
                prop_assert!(EmbeddingStore::from_bytes(&bytes[..cut]).is_err());
            }
        }
    }

    #[test]
    fn resampling_balances_and_keeps_originals(rows in class_rows(), method_ix in 0usize..3, seed in any::<u64>()) {
        let method = [SamplingMethod::Undersample, SamplingMethod::Smote, SamplingMethod::Adasyn][method_ix];
        let data = labeled(&rows);
        let out = resample(&data, &SamplerConfig::with_method(method, seed)).unwrap();
        let counts: Vec<usize> = out.class_counts().into_values().collect();
        let before = data.class_counts();
        let want = match method {
            SamplingMethod::Undersample => *before.values().min().unwrap(),
            _ => *before.values().max().unwrap(),
        };
        prop_assert!(counts.iter().all(|&n| n == want), "{:?} -> {:?}", before, counts);
        let originals: HashSet<&String> = data.ids().iter().collect();
        let kept = out.ids().iter().filter(|id| originals.contains(id)).count();
        if method == SamplingMethod::Undersample {
            prop_assert_eq!(kept, out.len());
        } else {
            prop_assert_eq!(kept, data.len());
        }
        prop_assert_eq!(resample(&data, &SamplerConfig::with_method(method, seed)).unwrap(), out);
    }

    #[test]
    fn plans_never_leak(manifest in manifest_strategy(), seed in any::<u64>()) {
        let policy = SplitPolicy::with_seed(seed);
        let mut plans: Vec<SplitPlan> = Vec::new();
        plans.push(plan_combined(&manifest, &policy).unwrap());
        let datasets: std::collections::BTreeSet<&str> = manifest.iter().map(|r| r.dataset_id.as_str()).collect();
        for d in datasets {
            match plan_separate(&manifest, d, &policy) {
                Ok(p) => plans.push(p),
                // a lone remaining clip cannot form folds
                Err(e) => prop_assert!(e.to_string().contains("training"), "{e}"),
            }
        }
        for plan in &plans {
            prop_assert!(audit_plan(plan).is_empty(), "{:?}", audit_plan(plan));
            let again = SplitPlan::from_json(&plan.to_json()).unwrap();
            prop_assert_eq!(&again, plan);
        }
        prop_assert_eq!(plan_combined(&manifest, &policy).unwrap(), plans[0].clone());
    }

    #[test]
    fn softmax_rows_are_distributions(values in prop::collection::vec(-800.0f64..800.0, 1..40), width in 1usize..6) {
        let rows = values.len() / width;
        prop_assume!(rows > 0);
        let logits = Array2::from_shape_vec((rows, width), values[..rows * width].to_vec()).unwrap();
        let p = softmax_rows(logits);
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn checkpoints_round_trip(d_in in 1usize..6, hidden in 1usize..6, classes in 2usize..5, seed in any::<u64>()) {
        let model = Mlp::<f32>::new(&[d_in, hidden, classes], seed).unwrap();
        let back = model_from_checkpoint_bytes(&model.to_checkpoint_bytes()).unwrap();
        prop_assert_eq!(back, model);
    }

    #[test]
    fn resampled_length_rounds(rate in prop::sample::select(vec![8_000u32, 11_025, 22_050, 44_100, 48_000]), len in 0usize..5000) {
        let r = Resampler::new(rate, 16_000);
        let out = r.process(&vec![0.25; len]);
        prop_assert_eq!(out.len(), r.output_len(len));
        let exact = len as f64 * 16_000.0 / f64::from(rate);
        prop_assert!((out.len() as f64 - exact).abs() <= 0.5);
    }

    #[test]
    fn percent_mean_is_half_up(values in prop::collection::vec(0i64..=10_000, 1..12)) {
        let ps: Vec<Percent> = values.iter().map(|&h| Percent::from_percent(h as f64 / 100.0)).collect();
        let total: i64 = values.iter().sum();
        let n = values.len() as i64;
        let expected = (2 * total + n) / (2 * n);
        prop_assert_eq!(Percent::mean(&ps).unwrap().hundredths(), expected);
    }

    #[test]
    fn grid_csv_round_trip(cells in prop::collection::btree_map((0usize..4, 0usize..3, 0usize..2, 0usize..4), 0i64..=10_000, 0..30)) {
        let datasets = ["ESD", "TESS", "MELD", "CREMA-D"];
        let sets = [EmotionSetKind::Four, EmotionSetKind::Five, EmotionSetKind::All];
        let regimes = [RegimeKind::Combined, RegimeKind::Separate];
        let mut grid = ExperimentGrid::new(datasets);
        let mut expected = BTreeMap::new();
        for (&(d, s, r, m), &h) in &cells {
            let column = GridColumn { emotion_set: sets[s], regime: regimes[r], sampling: SamplingMethod::ALL[m] };
            grid.set(datasets[d], column, Percent::from_percent(h as f64 / 100.0));
            grid.set_class_count(datasets[d], sets[s], 4 + s);
            expected.insert((d, column), h);
        }
        let back = ExperimentGrid::from_csv(&grid.render(GridFormat::Csv, None)).unwrap();
        for ((d, column), h) in expected {
            prop_assert_eq!(back.get(datasets[d], column).map(Percent::hundredths), Some(h));
        }
        prop_assert_eq!(back.render(GridFormat::Csv, None), grid.render(GridFormat::Csv, None));
    }
}
