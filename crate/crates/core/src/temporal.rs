//! Temporal fusion: a GRU over per-frame quality representations, a linear
//! head producing frame scores `q_t`, and memory/current temporal pooling.
//!
//! Pooling, with 0-based frame indices:
//!
//! * memory element `m_0 = q_0`, `m_t = min q[max(0, t - tau) .. t]` for
//!   `t > 0` (preceding window, current frame excluded);
//! * current element `c_t = Σ w_k q_k` over `k ∈ [t, min(T, t + tau))` with
//!   `w = softmax(-q)` restricted to that window, so poorer frames weigh more;
//! * video score `Q = mean_t(gamma * m_t + (1 - gamma) * c_t)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{memory_argmin, softmin_window, Graph, NodeId};
use crate::math;
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolingConfig {
    /// Window length in frames.
    pub tau: usize,
    /// Weight of the memory element against the current element.
    pub gamma: f64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self { tau: 12, gamma: 0.5 }
    }
}

impl PoolingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} is outside [0, 1]", self.gamma)));
        }
        Ok(())
    }
}

/// Gate weights of a GRU cell, input-major like the encoder projections.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell<T> {
    pub w_z: T,
    pub w_r: T,
    pub w_h: T,
    pub u_z: T,
    pub u_r: T,
    pub u_h: T,
    pub b_z: T,
    pub b_r: T,
    pub b_h: T,
}

/// GRU plus scoring head. Without a GRU the head reads the encoder output
/// directly, so `fc_w` is `D × 1` instead of `Dh × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T> {
    pub cell: Option<GruCell<T>>,
    pub fc_w: T,
    pub fc_b: T,
}

impl<T> GruParams<T> {
    pub fn try_map<'a, U, E>(&'a self, f: &mut dyn FnMut(&str, &'a T) -> Result<U, E>) -> Result<GruParams<U>, E> {
        let cell = match &self.cell {
            None => None,
            Some(c) => Some(GruCell {
                w_z: f("temporal.gru.w_z", &c.w_z)?,
                w_r: f("temporal.gru.w_r", &c.w_r)?,
                w_h: f("temporal.gru.w_h", &c.w_h)?,
                u_z: f("temporal.gru.u_z", &c.u_z)?,
                u_r: f("temporal.gru.u_r", &c.u_r)?,
                u_h: f("temporal.gru.u_h", &c.u_h)?,
                b_z: f("temporal.gru.b_z", &c.b_z)?,
                b_r: f("temporal.gru.b_r", &c.b_r)?,
                b_h: f("temporal.gru.b_h", &c.b_h)?,
            }),
        };
        Ok(GruParams {
            cell,
            fc_w: f("temporal.fc.weight", &self.fc_w)?,
            fc_b: f("temporal.fc.bias", &self.fc_b)?,
        })
    }
}

impl GruParams<Tensor> {
    /// `hidden == None` builds the GRU-less head.
    pub fn init(input: usize, hidden: Option<usize>, rng: &mut SeededRng) -> Self {
        let uniform = |rows: usize, cols: usize, rng: &mut SeededRng| {
            rng.uniform_tensor(&[rows, cols], 1.0 / math::sqrt(rows as f64))
        };
        let cell = hidden.map(|dh| GruCell {
            w_z: uniform(input, dh, rng),
            w_r: uniform(input, dh, rng),
            w_h: uniform(input, dh, rng),
            u_z: uniform(dh, dh, rng),
            u_r: uniform(dh, dh, rng),
            u_h: uniform(dh, dh, rng),
            b_z: Tensor::zeros(&[dh]),
            b_r: Tensor::zeros(&[dh]),
            b_h: Tensor::zeros(&[dh]),
        });
        let head_in = hidden.unwrap_or(input);
        Self {
            cell,
            fc_w: uniform(head_in, 1, rng),
            fc_b: Tensor::zeros(&[1]),
        }
    }

    pub fn shapes(input: usize, hidden: Option<usize>) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        if let Some(dh) = hidden {
            for g in ["z", "r", "h"] {
                out.push((format!("temporal.gru.w_{g}"), alloc::vec![input, dh]));
            }
            for g in ["z", "r", "h"] {
                out.push((format!("temporal.gru.u_{g}"), alloc::vec![dh, dh]));
            }
            for g in ["z", "r", "h"] {
                out.push((format!("temporal.gru.b_{g}"), alloc::vec![dh]));
            }
        }
        out.push(("temporal.fc.weight".into(), alloc::vec![hidden.unwrap_or(input), 1]));
        out.push(("temporal.fc.bias".into(), alloc::vec![1]));
        out
    }
}

/// Per-frame scores and the pooled video score.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityTrace {
    pub q: Vec<f64>,
    pub m: Vec<f64>,
    pub c: Vec<f64>,
    pub score: f64,
}

/// One GRU step on `1 × D` input and `1 × Dh` state:
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// h~ = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
pub fn gru_step(g: &mut Graph, x: NodeId, h: NodeId, cell: &GruCell<NodeId>) -> Result<NodeId> {
    let gate = |g: &mut Graph, w: NodeId, u: NodeId, b: NodeId, state: NodeId| -> Result<NodeId> {
        let xw = g.matmul(x, w)?;
        let hu = g.matmul(state, u)?;
        let s = g.add(xw, hu)?;
        g.add_row(s, b)
    };
    let z = gate(g, cell.w_z, cell.u_z, cell.b_z, h)?;
    let z = g.sigmoid(z)?;
    let r = gate(g, cell.w_r, cell.u_r, cell.b_r, h)?;
    let r = g.sigmoid(r)?;
    let rh = g.mul(r, h)?;
    let cand = gate(g, cell.w_h, cell.u_h, cell.b_h, rh)?;
    let cand = g.tanh(cand)?;
    // h' = h + z ⊙ (h~ - h)
    let delta = g.sub(cand, h)?;
    let step = g.mul(z, delta)?;
    g.add(h, step)
}

/// `q = h · W_fc + b_fc` as a `1 × 1` node.
pub fn frame_score(g: &mut Graph, h: NodeId, fc_w: NodeId, fc_b: NodeId) -> Result<NodeId> {
    let hw = g.matmul(h, fc_w)?;
    g.add_row(hw, fc_b)
}

/// Graph nodes for pooled scores over a `1 × T` score row.
#[derive(Debug, Clone, Copy)]
pub struct PooledNodes {
    pub memory: NodeId,
    pub current: NodeId,
    pub score: NodeId,
}

/// Memory/current pooling of a score row. With `pooling == false` the
/// score is the plain mean of `q` (the memory and current elements are still
/// produced for inspection).
pub fn pool_scores(g: &mut Graph, q: NodeId, config: &PoolingConfig, pooling: bool) -> Result<PooledNodes> {
    let memory = g.window_min(q, config.tau)?;
    let current = g.window_softmin(q, config.tau)?;
    let score = if pooling {
        let m = g.scale(memory, config.gamma)?;
        let c = g.scale(current, 1.0 - config.gamma)?;
        let blend = g.add(m, c)?;
        g.mean(blend)?
    } else {
        g.mean(q)?
    };
    Ok(PooledNodes { memory, current, score })
}

fn check_frame(q: &[f64], t: usize) -> Result<()> {
    if q.is_empty() {
        return Err(Error::EmptySequence);
    }
    if t >= q.len() {
        return Err(Error::Shape {
            op: "pooling",
            lhs: alloc::vec![q.len()],
            rhs: alloc::vec![t],
        });
    }
    Ok(())
}

/// Memory element of frame `t` (0-based).
pub fn memory_element(q: &[f64], t: usize, tau: usize) -> Result<f64> {
    check_frame(q, t)?;
    Ok(q[memory_argmin(q, t, tau.max(1))])
}

/// Current element of frame `t` (0-based).
pub fn current_element(q: &[f64], t: usize, tau: usize) -> Result<f64> {
    check_frame(q, t)?;
    Ok(softmin_window(q, t, tau.max(1)).1)
}

/// Pools a score sequence without building a graph.
pub fn video_score(q: &[f64], config: &PoolingConfig) -> Result<QualityTrace> {
    if q.is_empty() {
        return Err(Error::EmptySequence);
    }
    config.validate()?;
    let m: Vec<f64> = (0..q.len()).map(|t| q[memory_argmin(q, t, config.tau)]).collect();
    let c: Vec<f64> = (0..q.len()).map(|t| softmin_window(q, t, config.tau).1).collect();
    let total: f64 = m
        .iter()
        .zip(&c)
        .map(|(m, c)| config.gamma * m + (1.0 - config.gamma) * c)
        .sum();
    Ok(QualityTrace {
        q: q.to_vec(),
        m,
        c,
        score: total / q.len() as f64,
    })
}

/// Mean of the frame scores, used when temporal pooling is disabled.
pub fn mean_score(q: &[f64]) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(q.iter().sum::<f64>() / q.len() as f64)
}
