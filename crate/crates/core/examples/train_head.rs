// Trains the feed-forward classification head on clustered embeddings with
// Adam and validation-based early stopping, then checkpoints it.

use std::error::Error;

use ndarray::Array2;
use ser_toolkit::balancing::LabeledMatrix;
use ser_toolkit::classifier::{hidden_widths, layer_dims, read_checkpoint, train, write_checkpoint, LabeledRows, Mlp, TrainConfig};
use ser_toolkit::synthetic::gaussian_clusters;
use ser_toolkit::EmotionLabel;

fn to_rows(m: &LabeledMatrix, classes: &[EmotionLabel]) -> (Array2<f32>, Vec<usize>) {
    let x = Array2::from_shape_fn((m.len(), m.dim()), |(i, j)| m.row(i)[j] as f32);
    let y = m.labels().iter().map(|l| classes.iter().position(|c| c == l).unwrap()).collect();
    (x, y)
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let classes = [EmotionLabel::Neutral, EmotionLabel::Angry, EmotionLabel::Happy, EmotionLabel::Sad];
    let counts: Vec<_> = classes.iter().map(|&c| (c, 150)).collect();
    let dim = 24;
    let train_set = gaussian_clusters(&counts, dim, 2.0, 1);
    let (x, y) = to_rows(&train_set, &classes);
    // same centres, fresh noise: held-out rows from the same distribution
    let held: Vec<_> = classes.iter().map(|&c| (c, 40)).collect();
    let (vx, vy) = to_rows(&gaussian_clusters(&held, dim, 2.0, 1), &classes);

    let dims = layer_dims(dim, &hidden_widths(64), classes.len());
    let model = Mlp::<f32>::new(&dims, 7)?;
    println!("layers {dims:?}, {} parameters", model.num_parameters());

    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 60,
        seed: 7,
        ..TrainConfig::default()
    };
    let outcome = train(model, LabeledRows::new(x.view(), &y), Some(LabeledRows::new(vx.view(), &vy)), &cfg)?;
    for r in outcome.curve.iter().step_by(10) {
        println!("epoch {:>3} train {:.4} validation {:.4}", r.epoch, r.train_loss, r.validation_loss.unwrap_or(f64::NAN));
    }
    println!("kept epoch {} (stopped early: {})", outcome.selected_epoch, outcome.stopped_early);

    let predicted = outcome.model.predict(vx.view())?;
    let correct = predicted.iter().zip(&vy).filter(|(p, t)| p == t).count();
    println!("validation accuracy {:.2}%", 100.0 * correct as f64 / vy.len() as f64);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("head.sermlp");
    write_checkpoint(&outcome.model, &path)?;
    assert_eq!(read_checkpoint(&path)?, outcome.model);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
