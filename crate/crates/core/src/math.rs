//! Scalar kernels shared by the graph ops and by callers that need the same
//! numbers without building a graph.

pub use libm::{exp, fabs, sqrt, tanh};

/// sqrt(2/pi), the GELU tanh-approximation constant.
pub const GELU_COEFF: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// GELU, tanh approximation:
/// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(GELU_COEFF * (x + GELU_CUBIC * x * x * x)))
}

/// Derivative of [`gelu`].
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_COEFF * (x + GELU_CUBIC * x * x * x);
    let t = tanh(inner);
    let dinner = GELU_COEFF * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}
