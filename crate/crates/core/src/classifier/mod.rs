//! Feed-forward classification head over fixed-size embeddings.
//!
//! Hidden layers use ReLU, the output layer softmax, and the loss is mean
//! cross-entropy. Weight matrices are stored `fan_in × fan_out` so a batch
//! forward pass is `X · W + b`. The model is generic over `f32` (training)
//! and `f64` (gradient checking).

mod checkpoint;
mod train;

use std::fmt::{Debug, Display};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use thiserror::Error;

use crate::rng;

pub use checkpoint::{model_from_checkpoint_bytes, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use train::{train, write_loss_curve, EpochRecord, LabeledRows, Optimizer, TrainConfig, TrainOutcome};

/// Hidden widths used for full-size embeddings.
pub const STANDARD_HIDDEN: [usize; 4] = [4096, 2048, 1024, 512];
/// Smallest hidden width [`hidden_widths`] will produce.
pub const MIN_HIDDEN_WIDTH: usize = 8;
/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training rows")]
    EmptyTrainingSet,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Real:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Display + Default + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("finite constant")
}

/// `STANDARD_HIDDEN` divided by `divisor`, floored at [`MIN_HIDDEN_WIDTH`].
pub fn hidden_widths(divisor: usize) -> Vec<usize> {
    let divisor = divisor.max(1);
    STANDARD_HIDDEN.iter().map(|w| (w / divisor).max(MIN_HIDDEN_WIDTH)).collect()
}

/// `[d_in, hidden.., classes]`.
pub fn layer_dims(input_dim: usize, hidden: &[usize], classes: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(classes);
    dims
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F: Real> {
    weights: Vec<Array2<F>>,
    biases: Vec<Array1<F>>,
}

/// Parameter gradients with the same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F: Real> {
    pub weights: Vec<Array2<F>>,
    pub biases: Vec<Array1<F>>,
}

impl<F: Real> Gradients<F> {
    /// Flattened in the same order as [`Mlp::parameter`].
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

fn check_dims(dims: &[usize]) -> Result<(), ClassifierError> {
    if dims.len() < 2 {
        return Err(ClassifierError::InvalidModel("need at least input and output dims".into()));
    }
    if dims.contains(&0) {
        return Err(ClassifierError::InvalidModel(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

impl<F: Real> Mlp<F> {
    /// He-uniform weights `U(±sqrt(6 / fan_in))`, zero biases.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self, ClassifierError> {
        check_dims(dims)?;
        let mut stream = rng::stream(seed, &["mlp-init"]);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                real(stream.random_range(-limit..limit))
            }));
            biases.push(Array1::from_elem(fan_out, F::zero()));
        }
        Ok(Mlp { weights, biases })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, ClassifierError> {
        check_dims(dims)?;
        Ok(Mlp {
            weights: dims.windows(2).map(|p| Array2::zeros((p[0], p[1]))).collect(),
            biases: dims.windows(2).map(|p| Array1::zeros(p[1])).collect(),
        })
    }

    pub fn from_parameters(weights: Vec<Array2<F>>, biases: Vec<Array1<F>>) -> Result<Self, ClassifierError> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(ClassifierError::InvalidModel("weight and bias counts differ".into()));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != b.len() {
                return Err(ClassifierError::InvalidModel(format!("layer {l} bias length {} vs {} outputs", b.len(), w.ncols())));
            }
            if l > 0 && weights[l - 1].ncols() != w.nrows() {
                return Err(ClassifierError::InvalidModel(format!("layer {l} expects {} inputs", w.nrows())));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(ClassifierError::InvalidModel(format!("layer {l} has non-finite parameters")));
            }
        }
        check_dims(&Self::dims_of(&weights))?;
        Ok(Mlp { weights, biases })
    }

    fn dims_of(weights: &[Array2<F>]) -> Vec<usize> {
        let mut dims = vec![weights[0].nrows()];
        dims.extend(weights.iter().map(|w| w.ncols()));
        dims
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        Self::dims_of(&self.weights)
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.biases.last().expect("at least one layer").len()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<F>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<F>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<F>] {
        &mut self.biases
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().zip(&self.biases).map(|(w, b)| w.len() + b.len()).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if index < w.len() {
                return (l, Some((index / w.ncols(), index % w.ncols())), 0);
            }
            index -= w.len();
            if index < b.len() {
                return (l, None, index);
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `index` in layer order, each layer's weights (row-major) before its biases.
    pub fn parameter(&self, index: usize) -> F {
        match self.locate(index) {
            (l, Some(rc), _) => self.weights[l][rc],
            (l, None, j) => self.biases[l][j],
        }
    }

    pub fn set_parameter(&mut self, index: usize, value: F) {
        match self.locate(index) {
            (l, Some(rc), _) => self.weights[l][rc] = value,
            (l, None, j) => self.biases[l][j] = value,
        }
    }

    pub fn cast<G: Real>(&self) -> Mlp<G> {
        let conv = |v: &F| G::from_f64(v.to_f64().expect("finite")).expect("finite");
        Mlp {
            weights: self.weights.iter().map(|w| w.map(conv)).collect(),
            biases: self.biases.iter().map(|b| b.map(conv)).collect(),
        }
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<(), ClassifierError> {
        if x.ncols() != self.input_dim() {
            return Err(ClassifierError::DimMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Pre-activations of every layer; the last entry holds the logits.
    fn pre_activations(&self, x: ArrayView2<F>) -> Vec<Array2<F>> {
        let mut zs: Vec<Array2<F>> = Vec::with_capacity(self.weights.len());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = if l == 0 {
                x.dot(w) + b
            } else {
                relu(&zs[l - 1]).dot(w) + b
            };
            zs.push(z);
        }
        zs
    }

    pub fn logits(&self, x: ArrayView2<F>) -> Result<Array2<F>, ClassifierError> {
        self.check_input(&x)?;
        Ok(self.pre_activations(x).pop().expect("at least one layer"))
    }

    /// Class probabilities, one row per input row.
    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>, ClassifierError> {
        Ok(softmax_rows(self.logits(x)?))
    }

    pub fn forward_one(&self, x: &[F]) -> Result<Vec<F>, ClassifierError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.forward(view)?.row(0).to_vec())
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, x: ArrayView2<F>) -> Result<Vec<usize>, ClassifierError> {
        let logits = self.logits(x)?;
        Ok(logits.outer_iter().map(|row| argmax(row.iter().copied())).collect())
    }

    fn check_labels(&self, n: usize, labels: &[usize]) -> Result<(), ClassifierError> {
        if labels.len() != n {
            return Err(ClassifierError::DimMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        let classes = self.num_classes();
        match labels.iter().find(|&&l| l >= classes) {
            Some(&label) => Err(ClassifierError::InvalidLabel { label, classes }),
            None => Ok(()),
        }
    }

    /// Mean cross-entropy over the rows.
    pub fn mean_loss(&self, x: ArrayView2<F>, labels: &[usize]) -> Result<F, ClassifierError> {
        let probs = self.forward(x)?;
        self.check_labels(probs.nrows(), labels)?;
        Ok(batch_loss(&probs, labels))
    }

    /// Mean cross-entropy and its gradient by backpropagation.
    pub fn loss_and_gradients(&self, x: ArrayView2<F>, labels: &[usize]) -> Result<(F, Gradients<F>), ClassifierError> {
        self.check_input(&x)?;
        self.check_labels(x.nrows(), labels)?;
        if x.nrows() == 0 {
            return Err(ClassifierError::EmptyTrainingSet);
        }
        let zs = self.pre_activations(x.view());
        let probs = softmax_rows(zs.last().expect("at least one layer").clone());
        let loss = batch_loss(&probs, labels);

        let n: F = real(x.nrows() as f64);
        let mut delta = probs;
        for (row, &label) in labels.iter().enumerate() {
            delta[[row, label]] = delta[[row, label]] - F::one();
        }
        delta.mapv_inplace(|v| v / n);

        let layers = self.weights.len();
        let mut grad_w = vec![Array2::zeros((0, 0)); layers];
        let mut grad_b = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            grad_b[l] = delta.sum_axis(Axis(0));
            if l == 0 {
                grad_w[l] = x.t().dot(&delta);
            } else {
                let input = relu(&zs[l - 1]);
                grad_w[l] = input.t().dot(&delta);
                let mut back = delta.dot(&self.weights[l].t());
                ndarray::Zip::from(&mut back).and(&zs[l - 1]).for_each(|d, &z| {
                    if z <= F::zero() {
                        *d = F::zero();
                    }
                });
                delta = back;
            }
        }
        Ok((
            loss,
            Gradients {
                weights: grad_w,
                biases: grad_b,
            },
        ))
    }
}

fn relu<F: Real>(z: &Array2<F>) -> Array2<F> {
    z.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

fn argmax<F: Real>(values: impl Iterator<Item = F>) -> usize {
    let mut best = 0;
    let mut best_v = F::neg_infinity();
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows<F: Real>(mut logits: Array2<F>) -> Array2<F> {
    for mut row in logits.outer_iter_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.iter().copied().fold(F::zero(), |a, b| a + b);
        row.mapv_inplace(|v| v / sum);
    }
    logits
}

pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let row = Array2::from_shape_vec((1, logits.len()), logits.to_vec()).expect("one row");
    softmax_rows(row).into_raw_vec_and_offset().0
}

/// `-ln(max(probs[label], PROB_FLOOR))`.
pub fn cross_entropy<F: Real>(probs: &[F], label: usize) -> Result<F, ClassifierError> {
    let p = probs.get(label).ok_or(ClassifierError::InvalidLabel {
        label,
        classes: probs.len(),
    })?;
    Ok(-floored(*p).ln())
}

// `Float::max` drops NaN, which would hide a diverged model behind a finite loss.
fn floored<F: Real>(p: F) -> F {
    if p.is_nan() {
        p
    } else {
        p.max(real(PROB_FLOOR))
    }
}

fn batch_loss<F: Real>(probs: &Array2<F>, labels: &[usize]) -> F {
    let total = labels
        .iter()
        .enumerate()
        .fold(F::zero(), |acc, (row, &label)| acc - floored(probs[[row, label]]).ln());
    total / real(labels.len().max(1) as f64)
}

/// Largest relative error between backpropagated and central-difference
/// gradients over every parameter. The denominator is floored at `1e-6`.
pub fn gradient_check(model: &Mlp<f64>, x: ArrayView2<f64>, labels: &[usize], h: f64) -> Result<f64, ClassifierError> {
    let (_, grads) = model.loss_and_gradients(x.view(), labels)?;
    let analytic = grads.flatten();
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for (i, &a) in analytic.iter().enumerate() {
        let original = probe.parameter(i);
        probe.set_parameter(i, original + h);
        let up = probe.mean_loss(x.view(), labels)?;
        probe.set_parameter(i, original - h);
        let down = probe.mean_loss(x.view(), labels)?;
        probe.set_parameter(i, original);
        let numeric = (up - down) / (2.0 * h);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    Ok(worst)
}
