// Projects clustered embeddings to 2-D with exact t-SNE and writes the
// points as CSV plus an SVG scatter plot.

use std::error::Error;

use ndarray::Array2;
use ser_toolkit::synthetic::gaussian_clusters;
use ser_toolkit::tsne::{render_svg, run_tsne, silhouette_score, write_points_csv, ProjectedPoint, TsneConfig};
use ser_toolkit::EmotionLabel;

pub fn run() -> Result<(), Box<dyn Error>> {
    let classes = [EmotionLabel::Neutral, EmotionLabel::Angry, EmotionLabel::Sad];
    let counts: Vec<_> = classes.iter().map(|&c| (c, 50)).collect();
    let data = gaussian_clusters(&counts, 10, 4.0, 2);
    let x = Array2::from_shape_vec((data.len(), data.dim()), data.values().to_vec())?;
    let labels: Vec<usize> = data.labels().iter().map(|l| classes.iter().position(|c| c == l).unwrap()).collect();

    let cfg = TsneConfig {
        perplexity: 20.0,
        iterations: 500,
        seed: 2,
        ..TsneConfig::default()
    };
    let result = run_tsne(x.view(), &cfg)?;
    println!(
        "KL after exaggeration {:.3}, final {:.3}",
        result.kl_trace[cfg.exaggeration_iterations - 1],
        result.kl_trace[result.kl_trace.len() - 1]
    );
    println!(
        "silhouette: input {:.3}, embedding {:.3}",
        silhouette_score(x.view(), &labels),
        silhouette_score(result.embedding.view(), &labels)
    );

    let points: Vec<ProjectedPoint> = (0..data.len())
        .map(|i| ProjectedPoint {
            id: data.ids()[i].clone(),
            x: result.embedding[[i, 0]],
            y: result.embedding[[i, 1]],
            dataset_id: "synthetic".into(),
            emotion: data.label(i).to_string(),
        })
        .collect();
    let dir = tempfile::tempdir()?;
    write_points_csv(&dir.path().join("points.csv"), &points)?;
    let svg = render_svg(&points);
    std::fs::write(dir.path().join("points.svg"), &svg)?;
    println!("wrote {} points and a {} byte SVG", points.len(), svg.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
