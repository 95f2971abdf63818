//! The composed model: per-frame encoder, GRU, frame scores and temporal
//! pooling, plus configuration, initialization and the ablation switches.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataio::{FeatureSequence, SequenceDims};
use crate::encoder::{self, EncoderConfig, EncoderParams, FrameInputs, PriorTokens};
use crate::graph::{Graph, NodeId};
use crate::rng::SeededRng;
use crate::temporal::{self, GruParams, PoolingConfig, QualityTrace};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Switches for the ablation variants. All on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub use_content_token: bool,
    pub use_distortion_token: bool,
    pub use_temporal_pooling: bool,
    pub use_gru: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_content_token: true,
            use_distortion_token: true,
            use_temporal_pooling: true,
            use_gru: true,
        }
    }
}

impl Ablation {
    pub fn priors(&self) -> PriorTokens {
        PriorTokens {
            content: self.use_content_token,
            distortion: self.use_distortion_token,
        }
    }

    /// Report tag: `"full"`, or `"w.o. "` followed by the removed parts
    /// joined with `+`, e.g. `"w.o. CT+DT"`.
    pub fn tag(&self) -> String {
        let removed: Vec<&str> = [
            (!self.use_content_token, "CT"),
            (!self.use_distortion_token, "DT"),
            (!self.use_temporal_pooling, "TP"),
            (!self.use_gru, "GRU"),
        ]
        .into_iter()
        .filter_map(|(off, name)| off.then_some(name))
        .collect();
        if removed.is_empty() {
            "full".into()
        } else {
            format!("w.o. {}", removed.join("+"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// GRU hidden width.
    pub gru_hidden: usize,
    pub pooling: PoolingConfig,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            gru_hidden: 32,
            pooling: PoolingConfig::default(),
            ablation: Ablation::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.pooling.validate()?;
        if self.gru_hidden == 0 {
            return Err(Error::Config("gru_hidden must be at least 1".into()));
        }
        Ok(())
    }

    fn gru_width(&self) -> Option<usize> {
        self.ablation.use_gru.then_some(self.gru_hidden)
    }

    /// Name and shape of every parameter tensor, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = EncoderParams::shapes(&self.encoder);
        shapes.extend(GruParams::shapes(self.encoder.width, self.gru_width()));
        shapes
    }

    /// Checks a sequence's shapes against the configured input widths.
    pub fn check_input(&self, video: &FeatureSequence) -> Result<SequenceDims> {
        let dims = video.dims()?;
        let e = &self.encoder;
        for (what, found, expected) in [
            ("feature tokens", dims.tokens, e.tokens),
            ("feature width", dims.feature_width, e.feature_width),
            ("content width", dims.content_width, e.content_width),
            ("distortion width", dims.distortion_width, e.distortion_width),
        ] {
            if found != expected {
                return Err(Error::Width {
                    op: "predict_video",
                    what,
                    found,
                    expected,
                });
            }
        }
        Ok(dims)
    }
}

/// All trainable tensors (or graph handles to them).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub encoder: EncoderParams<T>,
    pub temporal: GruParams<T>,
}

impl<T> ModelWeights<T> {
    pub fn try_map<'a, U, E>(&'a self, f: &mut dyn FnMut(&str, &'a T) -> Result<U, E>) -> Result<ModelWeights<U>, E> {
        Ok(ModelWeights {
            encoder: self.encoder.try_map(f)?,
            temporal: self.temporal.try_map(f)?,
        })
    }

    pub fn map<'a, U>(&'a self, f: &mut dyn FnMut(&str, &'a T) -> U) -> ModelWeights<U> {
        let mapped: Result<_, core::convert::Infallible> = self.try_map(&mut |n, t| Ok(f(n, t)));
        match mapped {
            Ok(m) => m,
            Err(never) => match never {},
        }
    }

    /// Visits every slot in storage order.
    pub fn for_each<'a>(&'a self, f: &mut dyn FnMut(&str, &'a T)) {
        let _ = self.map(&mut |n, t| f(n, t));
    }

    /// Every slot in storage order.
    pub fn slots(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.for_each(&mut |_, t| out.push(t));
        out
    }

    /// Pairs up two weight sets of the same structure slot by slot.
    pub fn zip_map<U, V>(&self, other: &ModelWeights<U>, f: &mut dyn FnMut(&T, &U) -> V) -> ModelWeights<V> {
        let rhs = other.slots();
        let mut i = 0;
        self.map(&mut |_, t| {
            let v = f(t, rhs[i]);
            i += 1;
            v
        })
    }
}

impl ModelWeights<Tensor> {
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.numel());
        n
    }

    pub fn zeros_like(&self) -> Self {
        self.map(&mut |_, t| Tensor::zeros(t.shape()))
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> ModelWeights<NodeId> {
        self.map(&mut |_, t| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
    }
}

/// A configuration together with its weights: everything needed to score a
/// video, and what a parameter file stores.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: ModelWeights<Tensor>,
}

/// Seeded, reproducible initialization for `config`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = SeededRng::new(seed);
    let encoder = EncoderParams::init(&config.encoder, &mut rng)?;
    let temporal = GruParams::init(config.encoder.width, config.gru_width(), &mut rng);
    Ok(ModelParams {
        config: *config,
        weights: ModelWeights { encoder, temporal },
    })
}

impl ModelParams {
    /// The same weights under different ablation switches. Prior-token and
    /// pooling switches only change the forward pass; the GRU switch changes
    /// parameter shapes and must match.
    pub fn with_ablation(&self, ablation: Ablation) -> Result<Self> {
        if ablation.use_gru != self.config.ablation.use_gru {
            return Err(Error::Config(format!(
                "parameters were built {} a GRU",
                if self.config.ablation.use_gru {
                    "with"
                } else {
                    "without"
                }
            )));
        }
        Ok(Self {
            config: ModelConfig {
                ablation,
                ..self.config
            },
            weights: self.weights.clone(),
        })
    }

    /// Checks every tensor against the shapes the configuration implies.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.config.parameter_shapes();
        let mut actual = Vec::new();
        self.weights
            .for_each(&mut |n, t| actual.push((String::from(n), t.shape().to_vec())));
        if expected != actual {
            let mismatch = expected
                .iter()
                .zip(&actual)
                .find(|(e, a)| e != a)
                .map(|(e, _)| e.0.clone())
                .unwrap_or_else(|| "parameter count".into());
            return Err(Error::Config(format!(
                "parameter {mismatch} does not match the configuration"
            )));
        }
        Ok(())
    }
}

/// Graph handles produced by [`forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// `1 × T` frame scores.
    pub q: NodeId,
    pub memory: NodeId,
    pub current: NodeId,
    /// Video score, shape `[1]`.
    pub score: NodeId,
}

/// Builds the whole per-video computation in `g`.
///
/// Frames are encoded independently; all cross-frame interaction happens in
/// the GRU and the pooling layer.
pub fn forward(
    g: &mut Graph,
    video: &FeatureSequence,
    w: &ModelWeights<NodeId>,
    config: &ModelConfig,
) -> Result<ForwardNodes> {
    let dims = config.check_input(video)?;
    let enc = &config.encoder;
    let priors = config.ablation.priors();
    let mut state = w
        .temporal
        .cell
        .as_ref()
        .map(|_| g.constant(Tensor::zeros(&[1, config.gru_hidden])));
    let mut scores = Vec::with_capacity(dims.frames);
    for frame in &video.frames {
        let inputs = FrameInputs {
            features: g.constant(frame.features.clone()),
            content: g.constant(frame.content.reshape(alloc::vec![1, dims.content_width])?),
            distortion: g.constant(frame.distortion.reshape(alloc::vec![1, dims.distortion_width])?),
        };
        let quality = encoder::encode_frame(g, inputs, &w.encoder, enc, priors)?;
        let head_in = match (&w.temporal.cell, state) {
            (Some(cell), Some(h)) => {
                let h = temporal::gru_step(g, quality, h, cell)?;
                state = Some(h);
                h
            }
            _ => quality,
        };
        scores.push(temporal::frame_score(g, head_in, w.temporal.fc_w, w.temporal.fc_b)?);
    }
    let q = if scores.len() == 1 {
        scores[0]
    } else {
        g.concat_cols(&scores)?
    };
    let pooled = temporal::pool_scores(g, q, &config.pooling, config.ablation.use_temporal_pooling)?;
    Ok(ForwardNodes {
        q,
        memory: pooled.memory,
        current: pooled.current,
        score: pooled.score,
    })
}

/// Scores one video.
pub fn predict_video(video: &FeatureSequence, params: &ModelParams) -> Result<QualityTrace> {
    let mut g = Graph::new();
    let w = params.weights.bind(&mut g, false);
    let nodes = forward(&mut g, video, &w, &params.config)?;
    Ok(QualityTrace {
        q: g.value(nodes.q).to_vec(),
        m: g.value(nodes.memory).to_vec(),
        c: g.value(nodes.current).to_vec(),
        score: g.value(nodes.score).data()[0],
    })
}

/// L1 video-score loss `|Q - mos|` of one labeled video and its gradient
/// with respect to every weight. Weights the loss does not reach (for
/// example the projection of an ablated prior) get zero gradients.
pub fn loss_and_gradient(video: &FeatureSequence, params: &ModelParams) -> Result<(f64, ModelWeights<Tensor>)> {
    let mos = video.mos.ok_or_else(|| Error::Unlabeled(video.id.clone()))?;
    let mut g = Graph::new();
    let w = params.weights.bind(&mut g, true);
    let nodes = forward(&mut g, video, &w, &params.config)?;
    let target = g.constant(Tensor::scalar(mos));
    let diff = g.sub(nodes.score, target)?;
    let loss = g.abs(diff)?;
    let grads = g.backward(loss)?;
    let value = g.value(loss).data()[0];
    let grad = w.map(&mut |_, &id| {
        grads
            .get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(g.value(id).shape()))
    });
    Ok((value, grad))
}

/// The L1 loss alone, for finite-difference checks.
pub fn loss(video: &FeatureSequence, params: &ModelParams) -> Result<f64> {
    let mos = video.mos.ok_or_else(|| Error::Unlabeled(video.id.clone()))?;
    Ok((predict_video(video, params)?.score - mos).abs())
}
