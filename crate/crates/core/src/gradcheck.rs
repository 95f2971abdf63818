//! Central finite differences, the independent oracle for every analytic
//! gradient the graph produces.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dataio::FeatureSequence;
use crate::model::{self, ModelParams, ModelWeights};
use crate::tensor::Tensor;
use crate::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let base = x.to_vec();
    let mut grad = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let plus = f(&Tensor::from_parts(x.shape().to_vec(), probe.clone()));
        probe[i] = base[i] - h;
        let minus = f(&Tensor::from_parts(x.shape().to_vec(), probe.clone()));
        probe[i] = base[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::from_parts(x.shape().to_vec(), grad)
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest elementwise [`relative_error`] between two equally shaped tensors.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "gradient shapes differ");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

/// Outcome of [`check_model_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheck {
    pub max_relative_error: f64,
    /// Name of the parameter holding the worst element.
    pub worst: String,
    /// Number of scalar parameters compared.
    pub checked: usize,
}

/// Compares the analytic gradient of the L1 video-score loss with central
/// differences for every scalar parameter.
pub fn check_model_gradient(video: &FeatureSequence, params: &ModelParams, h: f64) -> Result<ModelCheck> {
    let (_, analytic) = model::loss_and_gradient(video, params)?;
    let mut names = Vec::new();
    params.weights.for_each(&mut |n, _| names.push(String::from(n)));
    let slots = params.weights.slots();
    let mut out = ModelCheck {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut failure = None;
    for (slot, grad) in analytic.slots().into_iter().enumerate() {
        let numeric = finite_diff_gradient(
            |t| {
                let weights = with_slot(&params.weights, slot, t);
                let probe = ModelParams {
                    config: params.config,
                    weights,
                };
                model::loss(video, &probe).unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    0.0
                })
            },
            slots[slot],
            h,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let err = max_relative_error(grad, &numeric);
        out.checked += grad.numel();
        if err > out.max_relative_error || out.worst.is_empty() {
            out.max_relative_error = err;
            out.worst = names[slot].clone();
        }
    }
    Ok(out)
}

fn with_slot(weights: &ModelWeights<Tensor>, slot: usize, value: &Tensor) -> ModelWeights<Tensor> {
    let mut i = 0;
    weights.map(&mut |_, t| {
        let out = if i == slot { value.clone() } else { t.clone() };
        i += 1;
        out
    })
}
