//! Mini-batch training with a constant learning rate.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Dimension, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{real, ClassifierError, Gradients, Mlp, Real};
use crate::rng;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop after this many epochs without validation improvement and keep
    /// the best parameters. Ignored when no validation rows are given.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::Adam,
            early_stop_patience: Some(5),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::InvalidConfig(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(ClassifierError::InvalidConfig("batch_size must be positive".into()));
        }
        if self.early_stop_patience == Some(0) {
            return Err(ClassifierError::InvalidConfig("early_stop_patience must be positive".into()));
        }
        Ok(())
    }
}

/// Feature rows paired with class indices.
#[derive(Debug, Clone, Copy)]
pub struct LabeledRows<'a, F: Real> {
    pub x: ArrayView2<'a, F>,
    pub y: &'a [usize],
}

impl<'a, F: Real> LabeledRows<'a, F> {
    pub fn new(x: ArrayView2<'a, F>, y: &'a [usize]) -> Self {
        LabeledRows { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Real> {
    pub model: Mlp<F>,
    pub curve: Vec<EpochRecord>,
    /// Epoch whose parameters were returned, 1-based; 0 means untrained.
    pub selected_epoch: usize,
    pub stopped_early: bool,
}

struct Adam<F: Real> {
    step: i32,
    m: Gradients<F>,
    v: Gradients<F>,
}

fn zeros_like<F: Real>(model: &Mlp<F>) -> Gradients<F> {
    Gradients {
        weights: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
        biases: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
    }
}

fn sgd_step<F: Real, D: Dimension>(p: &mut ndarray::Array<F, D>, g: &ndarray::Array<F, D>, lr: F) {
    Zip::from(p).and(g).for_each(|p, &g| *p = *p - lr * g);
}

fn adam_step<F: Real, D: Dimension>(
    p: &mut ndarray::Array<F, D>,
    g: &ndarray::Array<F, D>,
    m: &mut ndarray::Array<F, D>,
    v: &mut ndarray::Array<F, D>,
    lr: F,
    bias1: F,
    bias2: F,
) {
    let (b1, b2, eps) = (real::<F>(ADAM_BETA1), real::<F>(ADAM_BETA2), real::<F>(ADAM_EPSILON));
    let one = F::one();
    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    });
}

impl<F: Real> Mlp<F> {
    fn apply(&mut self, grads: &Gradients<F>, optimizer: &mut Option<Adam<F>>, lr: F) {
        match optimizer {
            None => {
                for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
                    sgd_step(w, g, lr);
                }
                for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
                    sgd_step(b, g, lr);
                }
            }
            Some(state) => {
                state.step += 1;
                let bias1 = F::one() - real::<F>(ADAM_BETA1).powi(state.step);
                let bias2 = F::one() - real::<F>(ADAM_BETA2).powi(state.step);
                for l in 0..self.weights.len() {
                    adam_step(
                        &mut self.weights[l],
                        &grads.weights[l],
                        &mut state.m.weights[l],
                        &mut state.v.weights[l],
                        lr,
                        bias1,
                        bias2,
                    );
                    adam_step(
                        &mut self.biases[l],
                        &grads.biases[l],
                        &mut state.m.biases[l],
                        &mut state.v.biases[l],
                        lr,
                        bias1,
                        bias2,
                    );
                }
            }
        }
    }
}

/// Trains `model` on `train`, shuffling with a seeded stream every epoch.
///
/// The reported train loss of an epoch is the size-weighted mean of its
/// batch losses, each taken before that batch's update. With a validation
/// set and a patience, the parameters of the best validation epoch are
/// returned; otherwise those of the last epoch.
pub fn train<F: Real>(
    model: Mlp<F>,
    train: LabeledRows<'_, F>,
    validation: Option<LabeledRows<'_, F>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>, ClassifierError> {
    cfg.validate()?;
    if train.x.nrows() == 0 {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    model.check_input(&train.x)?;
    model.check_labels(train.x.nrows(), train.y)?;
    if let Some(v) = &validation {
        model.check_input(&v.x)?;
        model.check_labels(v.x.nrows(), v.y)?;
    }
    let validation = validation.filter(|v| v.x.nrows() > 0);

    let lr: F = real(cfg.learning_rate);
    let mut optimizer = match cfg.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam => Some(Adam {
            step: 0,
            m: zeros_like(&model),
            v: zeros_like(&model),
        }),
    };
    let mut stream = rng::stream(cfg.seed, &["train", "shuffle"]);
    let mut order: Vec<usize> = (0..train.x.nrows()).collect();
    let patience = cfg.early_stop_patience.filter(|_| validation.is_some());

    let mut model = model;
    let mut best: Option<(f64, Mlp<F>, usize)> = None;
    let mut stale = 0;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut stream);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = train.x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train.y[i]).collect();
            let (loss, grads) = model.loss_and_gradients(xb.view(), &yb)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                log::error!(target: "train", "loss became {loss} at epoch {epoch}, batch {batch}");
                return Err(ClassifierError::NonFiniteLoss { epoch, batch });
            }
            total += loss * chunk.len() as f64;
            model.apply(&grads, &mut optimizer, lr);
        }
        let train_loss = total / order.len() as f64;
        let validation_loss = match &validation {
            Some(v) => {
                let loss = model.mean_loss(v.x, v.y)?.to_f64().unwrap_or(f64::NAN);
                if !loss.is_finite() {
                    return Err(ClassifierError::NonFiniteLoss { epoch, batch: 0 });
                }
                Some(loss)
            }
            None => None,
        };
        log::debug!(target: "train", "epoch {epoch}: train {train_loss:.6} validation {validation_loss:?}");
        curve.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });

        if let (Some(patience), Some(loss)) = (patience, validation_loss) {
            if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
                best = Some((loss, model.clone(), epoch));
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    stopped_early = epoch < cfg.epochs;
                    break;
                }
            }
        }
    }

    let (model, selected_epoch) = match best {
        Some((_, m, e)) => (m, e),
        None => (model, curve.len()),
    };
    Ok(TrainOutcome {
        model,
        curve,
        selected_epoch,
        stopped_early,
    })
}

/// Writes `epoch,train_loss,validation_loss`; missing validation is an empty field.
pub fn write_loss_curve(path: &Path, curve: &[EpochRecord]) -> Result<(), ClassifierError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,train_loss,validation_loss")?;
    for r in curve {
        let v = r.validation_loss.map(|v| format!("{v:.9}")).unwrap_or_default();
        writeln!(out, "{},{:.9},{}", r.epoch, r.train_loss, v)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{hidden_widths, layer_dims};
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn clusters(seed: u64, per_class: usize, dim: usize) -> (Array2<f32>, Vec<usize>) {
        let mut s = rng::stream(seed, &["clusters"]);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((3 * per_class, dim));
        let mut y = Vec::new();
        for c in 0..3 {
            for i in 0..per_class {
                let row = c * per_class + i;
                for j in 0..dim {
                    let center = if j % 3 == c { 3.0 } else { 0.0 };
                    x[[row, j]] = center + noise.sample(&mut s) as f32;
                }
                y.push(c);
            }
        }
        (x, y)
    }

    fn accuracy(m: &Mlp<f32>, x: &Array2<f32>, y: &[usize]) -> f64 {
        let p = m.predict(x.view()).unwrap();
        p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            early_stop_patience: None,
            ..Default::default()
        }
    }

    #[test]
    fn separable_clusters_are_learned() {
        let (x, y) = clusters(1, 100, 16);
        let m = Mlp::new(&layer_dims(16, &hidden_widths(128), 3), 1).unwrap();
        let out = train(m, LabeledRows::new(x.view(), &y), None, &quick_cfg()).unwrap();
        assert!(accuracy(&out.model, &x, &y) >= 0.95);
        assert!(out.curve[49].train_loss < out.curve[0].train_loss);
        assert!(out.model.mean_loss(x.view(), &y).unwrap() < 1e-3);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (x, y) = clusters(2, 5, 4);
        let m = Mlp::<f32>::new(&[4, 8, 3], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(m.clone(), LabeledRows::new(x.view(), &y), None, &cfg).unwrap();
        assert_eq!(out.model, m);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = clusters(3, 20, 6);
        let run = |opt| {
            let cfg = TrainConfig {
                epochs: 5,
                optimizer: opt,
                learning_rate: 1e-2,
                ..Default::default()
            };
            train(Mlp::<f32>::new(&[6, 8, 3], 4).unwrap(), LabeledRows::new(x.view(), &y), None, &cfg).unwrap()
        };
        for opt in [Optimizer::Sgd, Optimizer::Adam] {
            let (a, b) = (run(opt), run(opt));
            assert_eq!(a.model, b.model);
            assert_eq!(a.curve, b.curve);
        }
    }

    #[test]
    fn early_stopping_returns_best_epoch() {
        let (x, y) = clusters(4, 30, 6);
        let (vx, _) = clusters(5, 10, 6);
        // shuffled validation labels make the validation loss stop improving quickly
        let vy: Vec<usize> = (0..30).map(|i| (i * 7 + 1) % 3).collect();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 200,
            early_stop_patience: Some(3),
            ..Default::default()
        };
        let out = train(
            Mlp::<f32>::new(&[6, 16, 3], 0).unwrap(),
            LabeledRows::new(x.view(), &y),
            Some(LabeledRows::new(vx.view(), &vy)),
            &cfg,
        )
        .unwrap();
        assert!(out.stopped_early);
        let best = out
            .curve
            .iter()
            .min_by(|a, b| a.validation_loss.unwrap().total_cmp(&b.validation_loss.unwrap()))
            .unwrap();
        assert_eq!(out.selected_epoch, best.epoch);
        assert_eq!(out.curve.len(), best.epoch + 3);
        let reloss = out.model.mean_loss(vx.view(), &vy).unwrap() as f64;
        assert!((reloss - best.validation_loss.unwrap()).abs() < 1e-5);
    }

    #[test]
    fn exploding_updates_abort() {
        let (x, y) = clusters(6, 10, 4);
        let cfg = TrainConfig {
            learning_rate: 1e30,
            optimizer: Optimizer::Sgd,
            epochs: 20,
            early_stop_patience: None,
            ..Default::default()
        };
        let err = train(Mlp::<f32>::new(&[4, 8, 3], 0).unwrap(), LabeledRows::new(x.view(), &y), None, &cfg);
        assert!(matches!(err, Err(ClassifierError::NonFiniteLoss { .. })), "{err:?}");
    }

    #[test]
    fn loss_curve_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let curve = vec![
            EpochRecord {
                epoch: 1,
                train_loss: 1.5,
                validation_loss: None,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 1.25,
                validation_loss: Some(1.0),
            },
        ];
        write_loss_curve(&path, &curve).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "epoch,train_loss,validation_loss\n1,1.500000000,\n2,1.250000000,1.000000000\n");
    }
}
