// Rebalances an imbalanced labelled matrix with each sampling method and
// prints the class counts before and after.

use std::error::Error;

use ser_toolkit::balancing::{adasyn_weights, resample, SamplerConfig, SamplingMethod};
use ser_toolkit::synthetic::gaussian_clusters;
use ser_toolkit::EmotionLabel;

pub fn run() -> Result<(), Box<dyn Error>> {
    let counts = [
        (EmotionLabel::Neutral, 120),
        (EmotionLabel::Happy, 60),
        (EmotionLabel::Angry, 45),
        (EmotionLabel::Sad, 20),
    ];
    let data = gaussian_clusters(&counts, 6, 1.5, 9);
    println!("before      {:?}", data.class_counts());

    for method in SamplingMethod::ALL {
        let out = resample(&data, &SamplerConfig::with_method(method, 9))?;
        println!("{:<11} {:?}", method.as_str(), out.class_counts());
    }

    // ADASYN concentrates synthesis on members surrounded by other classes.
    let w = adasyn_weights(&data, EmotionLabel::Sad, 5);
    let hardest = w
        .members
        .iter()
        .zip(&w.ratios)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or("empty class")?;
    println!("hardest sad member: row {} with neighbour ratio {:.2}", hardest.0, hardest.1);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
