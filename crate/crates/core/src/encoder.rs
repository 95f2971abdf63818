//! Prior-augmented transformer encoder.
//!
//! One frame becomes a token matrix
//!
//! ```text
//! [ QF0     + PE[0]
//!   F[1..N] + PE[1..N]
//!   PF_C    + PE[N+1]
//!   PF_D    + PE[N+2] ]
//! ```
//!
//! where `F` are the projected backbone feature tokens, `PF_C`/`PF_D` the
//! projected content and distortion prior embeddings and `QF0` a trainable
//! quality token. The matrix runs through `L` post-norm layers
//! (`Z' = LN(MHA(Z) + Z)`, `Z = LN(FF(Z') + Z')`) and the final quality-token
//! row is the frame's quality representation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{Graph, NodeId};
use crate::math;
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Number of encoder layers `L`.
    pub layers: usize,
    /// Attention heads `H`.
    pub heads: usize,
    /// Model width `D`.
    pub width: usize,
    /// Feed-forward hidden width.
    pub ff_width: usize,
    /// Feature tokens per frame `N` (spatial positions of the backbone map).
    pub tokens: usize,
    pub feature_width: usize,
    pub content_width: usize,
    pub distortion_width: usize,
}

impl Default for EncoderConfig {
    /// L=6, H=8, D=512, D_ff=1024 over a 7x7x2048 backbone map with
    /// 512-wide content and distortion embeddings.
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 8,
            width: 512,
            ff_width: 1024,
            tokens: 49,
            feature_width: 2048,
            content_width: 512,
            distortion_width: 512,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("width", self.width),
            ("ff_width", self.ff_width),
            ("tokens", self.tokens),
            ("feature_width", self.feature_width),
            ("content_width", self.content_width),
            ("distortion_width", self.distortion_width),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} is not divisible by heads {}",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    /// Position-embedding rows: quality token, feature tokens, two priors.
    pub fn positions(&self) -> usize {
        self.tokens + 3
    }
}

/// Which prior tokens take part in attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorTokens {
    pub content: bool,
    pub distortion: bool,
}

impl Default for PriorTokens {
    fn default() -> Self {
        Self {
            content: true,
            distortion: true,
        }
    }
}

impl PriorTokens {
    /// Row count of the assembled token matrix for `tokens` feature tokens.
    pub fn token_rows(&self, tokens: usize) -> usize {
        1 + tokens + usize::from(self.content) + usize::from(self.distortion)
    }
}

/// Weights of one encoder layer. Projections are stored input-major
/// (`x · W`), so `wq` maps a `1×D` row to a `1×D` row.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub ln1_gain: T,
    pub ln1_bias: T,
    pub ff_w1: T,
    pub ff_b1: T,
    pub ff_w2: T,
    pub ff_b2: T,
    pub ln2_gain: T,
    pub ln2_bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub feature_w: T,
    pub feature_b: T,
    pub content_w: T,
    pub content_b: T,
    pub distortion_w: T,
    pub distortion_b: T,
    pub quality_token: T,
    pub positions: T,
    pub layers: Vec<LayerParams<T>>,
}

impl<T> LayerParams<T> {
    pub fn try_map<'a, U, E>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &'a T) -> Result<U, E>,
    ) -> Result<LayerParams<U>, E> {
        let mut m = |name: &str, t: &'a T| f(&format!("{prefix}.{name}"), t);
        Ok(LayerParams {
            wq: m("attn.wq", &self.wq)?,
            wk: m("attn.wk", &self.wk)?,
            wv: m("attn.wv", &self.wv)?,
            wo: m("attn.wo", &self.wo)?,
            ln1_gain: m("ln1.gain", &self.ln1_gain)?,
            ln1_bias: m("ln1.bias", &self.ln1_bias)?,
            ff_w1: m("ff.w1", &self.ff_w1)?,
            ff_b1: m("ff.b1", &self.ff_b1)?,
            ff_w2: m("ff.w2", &self.ff_w2)?,
            ff_b2: m("ff.b2", &self.ff_b2)?,
            ln2_gain: m("ln2.gain", &self.ln2_gain)?,
            ln2_bias: m("ln2.bias", &self.ln2_bias)?,
        })
    }
}

impl<T> EncoderParams<T> {
    /// Maps every tensor slot in a fixed order, passing its dotted name.
    pub fn try_map<'a, U, E>(&'a self, f: &mut dyn FnMut(&str, &'a T) -> Result<U, E>) -> Result<EncoderParams<U>, E> {
        Ok(EncoderParams {
            feature_w: f("encoder.feature_proj.weight", &self.feature_w)?,
            feature_b: f("encoder.feature_proj.bias", &self.feature_b)?,
            content_w: f("encoder.content_proj.weight", &self.content_w)?,
            content_b: f("encoder.content_proj.bias", &self.content_b)?,
            distortion_w: f("encoder.distortion_proj.weight", &self.distortion_w)?,
            distortion_b: f("encoder.distortion_proj.bias", &self.distortion_b)?,
            quality_token: f("encoder.quality_token", &self.quality_token)?,
            positions: f("encoder.position_embedding", &self.positions)?,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.try_map(&format!("encoder.layers.{i}"), &mut *f))
                .collect::<Result<_, E>>()?,
        })
    }
}

impl EncoderParams<Tensor> {
    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases
    /// zero, layer-norm gains one, quality token and position embeddings
    /// normal with standard deviation 0.02.
    pub fn init(config: &EncoderConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let linear = |fan_in: usize, fan_out: usize, rng: &mut SeededRng| {
            rng.uniform_tensor(&[fan_in, fan_out], 1.0 / math::sqrt(fan_in as f64))
        };
        let feature_w = linear(config.feature_width, d, rng);
        let content_w = linear(config.content_width, d, rng);
        let distortion_w = linear(config.distortion_width, d, rng);
        let quality_token = rng.normal_tensor(&[1, d], 0.02);
        let positions = rng.normal_tensor(&[config.positions(), d], 0.02);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                wq: linear(d, d, rng),
                wk: linear(d, d, rng),
                wv: linear(d, d, rng),
                wo: linear(d, d, rng),
                ln1_gain: Tensor::full(&[d], 1.0),
                ln1_bias: Tensor::zeros(&[d]),
                ff_w1: linear(d, config.ff_width, rng),
                ff_b1: Tensor::zeros(&[config.ff_width]),
                ff_w2: linear(config.ff_width, d, rng),
                ff_b2: Tensor::zeros(&[d]),
                ln2_gain: Tensor::full(&[d], 1.0),
                ln2_bias: Tensor::zeros(&[d]),
            })
            .collect();
        Ok(Self {
            feature_w,
            feature_b: Tensor::zeros(&[d]),
            content_w,
            content_b: Tensor::zeros(&[d]),
            distortion_w,
            distortion_b: Tensor::zeros(&[d]),
            quality_token,
            positions,
            layers,
        })
    }

    /// Expected shape of every slot, by name, for a configuration.
    pub fn shapes(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
        let d = config.width;
        let mut out = Vec::new();
        let mut push = |name: String, shape: &[usize]| out.push((name, shape.to_vec()));
        push("encoder.feature_proj.weight".into(), &[config.feature_width, d]);
        push("encoder.feature_proj.bias".into(), &[d]);
        push("encoder.content_proj.weight".into(), &[config.content_width, d]);
        push("encoder.content_proj.bias".into(), &[d]);
        push("encoder.distortion_proj.weight".into(), &[config.distortion_width, d]);
        push("encoder.distortion_proj.bias".into(), &[d]);
        push("encoder.quality_token".into(), &[1, d]);
        push("encoder.position_embedding".into(), &[config.positions(), d]);
        for i in 0..config.layers {
            let p = format!("encoder.layers.{i}");
            for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
                push(format!("{p}.{w}"), &[d, d]);
            }
            push(format!("{p}.ln1.gain"), &[d]);
            push(format!("{p}.ln1.bias"), &[d]);
            push(format!("{p}.ff.w1"), &[d, config.ff_width]);
            push(format!("{p}.ff.b1"), &[config.ff_width]);
            push(format!("{p}.ff.w2"), &[config.ff_width, d]);
            push(format!("{p}.ff.b2"), &[d]);
            push(format!("{p}.ln2.gain"), &[d]);
            push(format!("{p}.ln2.bias"), &[d]);
        }
        out
    }
}

/// Per-frame encoder inputs already placed in a graph.
#[derive(Debug, Clone, Copy)]
pub struct FrameInputs {
    /// `N × C_feat` backbone features.
    pub features: NodeId,
    /// `1 × C_cont` content embedding.
    pub content: NodeId,
    /// `1 × C_dist` distortion embedding.
    pub distortion: NodeId,
}

fn expect_shape(g: &Graph, id: NodeId, what: &'static str, op: &'static str, shape: [usize; 2]) -> Result<()> {
    let actual = g.value(id).shape();
    if actual.len() == 2 && actual[0] == shape[0] && actual[1] == shape[1] {
        return Ok(());
    }
    if actual.len() == 2 && actual[0] == shape[0] {
        return Err(Error::Width {
            op,
            what,
            found: actual[1],
            expected: shape[1],
        });
    }
    Err(Error::Shape {
        op,
        lhs: actual.to_vec(),
        rhs: shape.to_vec(),
    })
}

/// `F = raw · W + b`: one `D`-wide feature token per backbone position.
pub fn project_features(
    g: &mut Graph,
    raw: NodeId,
    p: &EncoderParams<NodeId>,
    config: &EncoderConfig,
) -> Result<NodeId> {
    expect_shape(
        g,
        raw,
        "feature map",
        "project_features",
        [config.tokens, config.feature_width],
    )?;
    let xw = g.matmul(raw, p.feature_w)?;
    g.add_row(xw, p.feature_b)
}

/// Projects the content and distortion embeddings to prior tokens with two
/// independent affine maps.
pub fn project_priors(
    g: &mut Graph,
    content: NodeId,
    distortion: NodeId,
    p: &EncoderParams<NodeId>,
    config: &EncoderConfig,
) -> Result<(NodeId, NodeId)> {
    expect_shape(
        g,
        content,
        "content embedding",
        "project_priors",
        [1, config.content_width],
    )?;
    expect_shape(
        g,
        distortion,
        "distortion embedding",
        "project_priors",
        [1, config.distortion_width],
    )?;
    let c = g.matmul(content, p.content_w)?;
    let c = g.add_row(c, p.content_b)?;
    let d = g.matmul(distortion, p.distortion_w)?;
    let d = g.add_row(d, p.distortion_b)?;
    Ok((c, d))
}

/// Builds `Z0`. Disabled prior tokens are left out together with their
/// position-embedding rows; the remaining tokens keep their own positions.
pub fn assemble_tokens(
    g: &mut Graph,
    features: NodeId,
    content: NodeId,
    distortion: NodeId,
    p: &EncoderParams<NodeId>,
    priors: PriorTokens,
) -> Result<NodeId> {
    let n = g.value(features).rows();
    let mut rows = Vec::with_capacity(4);
    rows.push(p.quality_token);
    rows.push(features);
    if priors.content {
        rows.push(content);
    }
    if priors.distortion {
        rows.push(distortion);
    }
    let tokens = g.concat_rows(&rows)?;

    let positions = if priors.content && priors.distortion {
        p.positions
    } else {
        let mut parts = Vec::with_capacity(3);
        parts.push(g.slice_rows(p.positions, 0, n + 1)?);
        if priors.content {
            parts.push(g.slice_rows(p.positions, n + 1, 1)?);
        }
        if priors.distortion {
            parts.push(g.slice_rows(p.positions, n + 2, 1)?);
        }
        if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)?
        }
    };
    g.add(tokens, positions)
}

/// Multi-head self-attention without masking:
/// per head `softmax(Q Kᵀ / sqrt(D/H)) V`, heads concatenated and projected
/// by `wo`.
pub fn mha(g: &mut Graph, z: NodeId, layer: &LayerParams<NodeId>, heads: usize) -> Result<NodeId> {
    mha_inner(g, z, layer, heads, None)
}

/// Runs [`mha`] and also returns each head's attention-weight matrix.
pub fn mha_with_weights(
    g: &mut Graph,
    z: NodeId,
    layer: &LayerParams<NodeId>,
    heads: usize,
) -> Result<(NodeId, Vec<NodeId>)> {
    let mut weights = Vec::with_capacity(heads);
    let out = mha_inner(g, z, layer, heads, Some(&mut weights))?;
    Ok((out, weights))
}

fn mha_inner(
    g: &mut Graph,
    z: NodeId,
    layer: &LayerParams<NodeId>,
    heads: usize,
    mut record: Option<&mut Vec<NodeId>>,
) -> Result<NodeId> {
    let d = g.value(z).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} is not divisible by heads {heads}")));
    }
    let dk = d / heads;
    let scale = 1.0 / math::sqrt(dk as f64);
    let q = g.matmul(z, layer.wq)?;
    let k = g.matmul(z, layer.wk)?;
    let v = g.matmul(z, layer.wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let weights = g.softmax_rows(scores)?;
        if let Some(r) = record.as_deref_mut() {
            r.push(weights);
        }
        outs.push(g.matmul(weights, vh)?);
    }
    let concat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    g.matmul(concat, layer.wo)
}

/// One post-norm encoder layer.
pub fn encoder_layer(g: &mut Graph, z: NodeId, layer: &LayerParams<NodeId>, heads: usize) -> Result<NodeId> {
    let attn = mha(g, z, layer, heads)?;
    let res = g.add(attn, z)?;
    let z1 = g.layer_norm(res, layer.ln1_gain, layer.ln1_bias, LAYER_NORM_EPS)?;

    let hidden = g.matmul(z1, layer.ff_w1)?;
    let hidden = g.add_row(hidden, layer.ff_b1)?;
    let hidden = g.gelu(hidden)?;
    let ff = g.matmul(hidden, layer.ff_w2)?;
    let ff = g.add_row(ff, layer.ff_b2)?;
    let res = g.add(ff, z1)?;
    g.layer_norm(res, layer.ln2_gain, layer.ln2_bias, LAYER_NORM_EPS)
}

/// Full encoder pass for one frame; returns the `1 × D` quality-token row of
/// the last layer.
pub fn encode_frame(
    g: &mut Graph,
    inputs: FrameInputs,
    p: &EncoderParams<NodeId>,
    config: &EncoderConfig,
    priors: PriorTokens,
) -> Result<NodeId> {
    let tokens = encode_tokens(g, inputs, p, config, priors)?;
    g.slice_rows(tokens, 0, 1)
}

/// Like [`encode_frame`] but returns the whole final token matrix `Z_L`.
pub fn encode_tokens(
    g: &mut Graph,
    inputs: FrameInputs,
    p: &EncoderParams<NodeId>,
    config: &EncoderConfig,
    priors: PriorTokens,
) -> Result<NodeId> {
    let features = project_features(g, inputs.features, p, config)?;
    let (content, distortion) = project_priors(g, inputs.content, inputs.distortion, p, config)?;
    let mut z = assemble_tokens(g, features, content, distortion, p, priors)?;
    for layer in &p.layers {
        z = encoder_layer(g, z, layer, config.heads)?;
    }
    Ok(z)
}

/// Places a parameter set into a graph, as trainable leaves or constants.
pub fn bind(g: &mut Graph, params: &EncoderParams<Tensor>, trainable: bool) -> EncoderParams<NodeId> {
    let bound: Result<_, core::convert::Infallible> = params.try_map(&mut |_, t| {
        Ok(if trainable {
            g.param(t.clone())
        } else {
            g.constant(t.clone())
        })
    });
    match bound {
        Ok(b) => b,
        Err(never) => match never {},
    }
}
