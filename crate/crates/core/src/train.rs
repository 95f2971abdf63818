//! Dataset splitting, the optimizer, the training loop and evaluation.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataio::FeatureSequence;
use crate::math;
use crate::metrics;
use crate::model::{self, init_model, Ablation, ModelConfig, ModelParams, ModelWeights};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Videos per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Fraction of videos used for training when splitting.
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-4,
            batch_size: 16,
            optimizer: OptimizerKind::Adam,
            split_ratio: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and nonnegative",
                self.learning_rate
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split ratio {} must lie in (0, 1)",
                self.split_ratio
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first `round(ratio · n)` items (at least one,
/// at most `n - 1`) go to the training side.
pub fn split_dataset<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::Config(format!("cannot split {} items", items.len())));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let cut = (libm::round(ratio * n as f64) as usize).clamp(1, n - 1);
    let train = order[..cut].iter().map(|&i| items[i].clone()).collect();
    let test = order[cut..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or plain gradient descent.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, weights: &ModelWeights<Tensor>, grads: &ModelWeights<Tensor>) -> ModelWeights<Tensor> {
        self.step += 1;
        if self.first.is_empty() {
            for w in weights.slots() {
                self.first.push(vec![0.0; w.numel()]);
                self.second.push(vec![0.0; w.numel()]);
            }
        }
        let bias1 = 1.0 - libm::pow(self.beta1, f64::from(self.step));
        let bias2 = 1.0 - libm::pow(self.beta2, f64::from(self.step));
        let mut slot = 0;
        weights.zip_map(grads, &mut |w, g| {
            let data: Vec<f64> = match self.kind {
                OptimizerKind::Sgd => w.data().iter().zip(g.data()).map(|(w, g)| w - self.lr * g).collect(),
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                    w.data()
                        .iter()
                        .zip(g.data())
                        .enumerate()
                        .map(|(i, (w, g))| {
                            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                            let mhat = m[i] / bias1;
                            let vhat = v[i] / bias2;
                            w - self.lr * mhat / (math::sqrt(vhat) + self.eps)
                        })
                        .collect()
                }
            };
            slot += 1;
            Tensor::from_parts(w.shape().to_vec(), data)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean L1 loss over the training videos seen during the epoch.
    pub train_loss: f64,
    /// Validation PLCC/SRCC after the epoch; `None` without a validation
    /// set or while predictions are still constant.
    pub validation: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

/// Training stopped because the loss or the weights became non-finite.
/// `params` is the last state whose weights were all finite.
#[derive(Debug, Clone)]
pub struct Diverged {
    pub epoch: usize,
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] Error),
    #[error("training diverged at epoch {}", .0.epoch)]
    Diverged(Box<Diverged>),
}

fn accumulate(sum: &mut Option<ModelWeights<Vec<f64>>>, grad: &ModelWeights<Tensor>) {
    match sum {
        None => *sum = Some(grad.map(&mut |_, t| t.to_vec())),
        Some(s) => {
            let slots = grad.slots();
            let mut i = 0;
            *s = s.map(&mut |_, acc| {
                let g = slots[i].data();
                i += 1;
                acc.iter().zip(g).map(|(a, b)| a + b).collect()
            });
        }
    }
}

/// Trains a freshly initialized model (seeded by `model_config.seed`) on
/// `train_set`, recording validation correlation on `validation` after
/// every epoch. Deterministic given the two seeds.
pub fn train(
    train_set: &[FeatureSequence],
    validation: &[FeatureSequence],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<Trained, TrainError> {
    let params = init_model(model_config, model_config.seed)?;
    train_from(params, train_set, validation, config)
}

/// Continues training from existing parameters.
pub fn train_from(
    mut params: ModelParams,
    train_set: &[FeatureSequence],
    validation: &[FeatureSequence],
    config: &TrainConfig,
) -> Result<Trained, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()).into());
    }
    let mut rng = SeededRng::new(config.seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut losses = vec![0.0; train_set.len()];
        for batch in order.chunks(config.batch_size) {
            let mut sum = None;
            for &i in batch {
                let (loss, grad) = match model::loss_and_gradient(&train_set[i], &params) {
                    Ok(r) => r,
                    Err(Error::NonFinite { .. }) => {
                        return Err(diverged(epoch, params, history));
                    }
                    Err(e) => return Err(e.into()),
                };
                losses[i] = loss;
                accumulate(&mut sum, &grad);
            }
            let scale = 1.0 / batch.len() as f64;
            let sum = sum.expect("batches are nonempty");
            let mut flat = sum.slots().into_iter();
            let mean_grad = params.weights.map(&mut |_, w| {
                let g = flat.next().expect("same structure");
                Tensor::from_parts(w.shape().to_vec(), g.iter().map(|v| v * scale).collect())
            });
            let updated = optimizer.step(&params.weights, &mean_grad);
            if updated.slots().iter().any(|t| !t.is_finite()) {
                return Err(diverged(epoch, params, history));
            }
            params.weights = updated;
        }
        // summed in index order so the value does not depend on the shuffle
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !train_loss.is_finite() {
            return Err(diverged(epoch, params, history));
        }
        let validation = if validation.is_empty() {
            None
        } else {
            evaluate(&params, validation, params.config.ablation)
                .ok()
                .map(|r| (r.plcc, r.srcc))
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation,
        });
    }
    Ok(Trained { params, history })
}

fn diverged(epoch: usize, params: ModelParams, history: Vec<EpochRecord>) -> TrainError {
    TrainError::Diverged(Box::new(Diverged { epoch, params, history }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub predicted: f64,
    pub mos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tag: String,
    pub plcc: f64,
    pub srcc: f64,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn from_predictions(tag: String, predictions: Vec<Prediction>) -> Result<Self> {
        let pred: Vec<f64> = predictions.iter().map(|p| p.predicted).collect();
        let mos: Vec<f64> = predictions.iter().map(|p| p.mos).collect();
        Ok(Self {
            tag,
            plcc: metrics::plcc(&pred, &mos)?,
            srcc: metrics::srcc(&pred, &mos)?,
            predictions,
        })
    }
}

/// Scores one labeled video.
pub fn predict_labeled(video: &FeatureSequence, params: &ModelParams) -> Result<Prediction> {
    let mos = video.mos.ok_or_else(|| Error::Unlabeled(video.id.clone()))?;
    Ok(Prediction {
        id: video.id.clone(),
        predicted: model::predict_video(video, params)?.score,
        mos,
    })
}

/// Predicts every video under `ablation` and correlates with the labels.
pub fn evaluate(params: &ModelParams, dataset: &[FeatureSequence], ablation: Ablation) -> Result<EvalReport> {
    let params = params.with_ablation(ablation)?;
    let predictions = dataset
        .iter()
        .map(|v| predict_labeled(v, &params))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(ablation.tag(), predictions)
}
