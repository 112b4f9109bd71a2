// Speaker-held-out split plans: one test speaker per dataset, then five
// cross-validation folds over what remains. The audit re-checks that no
// held-out speaker leaks into a fold.

use std::error::Error;

use ser_toolkit::splits::{audit_plan, plan_combined, plan_separate, SplitPolicy};
use ser_toolkit::synthetic::{synthetic_manifest, SyntheticOptions};

pub fn run() -> Result<(), Box<dyn Error>> {
    let opts = SyntheticOptions {
        datasets: Some(vec!["RAVDESS".into(), "TESS".into(), "SAVEE".into()]),
        max_speakers: Some(8),
        ..Default::default()
    };
    let manifest = synthetic_manifest(4, &opts);
    let policy = SplitPolicy::with_seed(4);

    for dataset in ["RAVDESS", "TESS", "SAVEE"] {
        let plan = plan_separate(&manifest, dataset, &policy)?;
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.validation.len()).collect();
        println!(
            "{dataset:<8} mode={:?} test speaker={} test clips={} validation sizes={sizes:?}",
            plan.mode,
            plan.test_speakers[dataset],
            plan.test_ids.len()
        );
        assert!(audit_plan(&plan).is_empty());
    }

    let combined = plan_combined(&manifest, &policy)?;
    println!("combined: {} held-out speakers, {} folds", combined.test_speakers.len(), combined.folds.len());
    for (k, fold) in combined.folds.iter().enumerate() {
        println!("  fold {k}: train {} validation {}", fold.train.len(), fold.validation.len());
    }

    let mut leaky = combined.clone();
    let clip = leaky.test_ids[0].clone();
    leaky.folds[1].train.push(clip);
    for v in audit_plan(&leaky) {
        println!("audit: {:?} {} fold {:?}: {}", v.kind, v.id, v.fold, v.detail);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
