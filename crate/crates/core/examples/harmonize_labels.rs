// Shows how native dataset labels land in the unified taxonomy for each
// emotion set, then projects a small mixed manifest into the 4-emotion set.
//
// ```text
// cargo run --example harmonize_labels
// ```

use std::collections::BTreeMap;
use std::error::Error;

use ser_toolkit::{EmotionSet, EmotionSetKind, Taxonomy, UtteranceRecord};

pub fn run() -> Result<(), Box<dyn Error>> {
    let taxonomy = Taxonomy::with_defaults();
    let sets = [EmotionSet::four(), EmotionSet::five(), EmotionSet::all()];

    for dataset in ["RAVDESS", "MELD", "IEMOCAP"] {
        println!("{dataset}");
        let mapping = taxonomy.mapping(dataset).ok_or("missing built-in mapping")?;
        let mut natives: Vec<&str> = mapping.rules().iter().map(|r| r.native.as_str()).collect();
        natives.dedup();
        for native in natives {
            let cells: Vec<String> = sets
                .iter()
                .map(|set| match taxonomy.map_label(dataset, native, set) {
                    Ok(Some(label)) => label.to_string(),
                    Ok(None) => "-".to_string(),
                    Err(e) => format!("error: {e}"),
                })
                .collect();
            println!("  {:<12} four={:<10} five={:<10} all={}", native, cells[0], cells[1], cells[2]);
        }
    }

    let records = [("RAVDESS", "calm"), ("RAVDESS", "angry"), ("MELD", "joy"), ("IEMOCAP", "frustrated"), ("IEMOCAP", "sad")];
    let manifest: Vec<UtteranceRecord> = records
        .iter()
        .enumerate()
        .map(|(i, (dataset, native))| UtteranceRecord {
            id: format!("{dataset}/{i}.wav"),
            dataset_id: dataset.to_string(),
            speaker_id: "spk".into(),
            native_label: native.to_string(),
            unified_label: None,
            duration_s: 3.0,
            language: "en".into(),
            sample_rate_hz: 16_000,
        })
        .collect();
    let kept = taxonomy.project_manifest(&manifest, &EmotionSet::of_kind(EmotionSetKind::Four))?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for record in &kept {
        *counts.entry(record.unified_label.map(|l| l.to_string()).unwrap_or_default()).or_default() += 1;
    }
    println!("projected {} of {} records into the 4-emotion set: {counts:?}", kept.len(), manifest.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
