//! Synthetic feature sequences with analytic ground-truth quality.
//!
//! Each video draws a latent quality `s ~ U[1, 5]` and a content cluster.
//! Per frame, the distortion embedding is `d0 + s·d1 + noise`, the feature
//! map is `b0 + s·b1 + noise` and the content embedding is the cluster center
//! plus noise. The MOS label is `s` itself. The fixed directions `d0, d1,
//! b0, b1` and the centers are drawn from the seed before any video.

use alloc::format;
use alloc::vec::Vec;

use crate::dataio::{FeatureSequence, Frame};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MOS_RANGE: (f64, f64) = (1.0, 5.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub videos: usize,
    pub frames: usize,
    pub tokens: usize,
    pub feature_width: usize,
    pub content_width: usize,
    pub distortion_width: usize,
    /// Standard deviation of the additive per-frame noise.
    pub noise: f64,
    /// Number of content clusters.
    pub clusters: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            videos: 250,
            frames: 8,
            tokens: 4,
            feature_width: 16,
            content_width: 8,
            distortion_width: 8,
            noise: 0.1,
            clusters: 5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("videos", self.videos),
            ("frames", self.frames),
            ("tokens", self.tokens),
            ("feature_width", self.feature_width),
            ("content_width", self.content_width),
            ("distortion_width", self.distortion_width),
            ("clusters", self.clusters),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise {} must be finite and nonnegative",
                self.noise
            )));
        }
        Ok(())
    }
}

/// The fixed directions a dataset is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBasis {
    pub feature_offset: Tensor,
    pub feature_slope: Tensor,
    pub distortion_offset: Tensor,
    pub distortion_slope: Tensor,
    pub content_centers: Vec<Tensor>,
}

fn draw_basis(spec: &SynthSpec, rng: &mut SeededRng) -> SynthBasis {
    let fshape = [spec.tokens, spec.feature_width];
    SynthBasis {
        feature_offset: rng.normal_tensor(&fshape, 1.0),
        feature_slope: rng.normal_tensor(&fshape, 1.0),
        distortion_offset: rng.normal_tensor(&[spec.distortion_width], 1.0),
        distortion_slope: rng.normal_tensor(&[spec.distortion_width], 1.0),
        content_centers: (0..spec.clusters)
            .map(|_| rng.normal_tensor(&[spec.content_width], 1.0))
            .collect(),
    }
}

/// The basis [`synth_dataset`] uses for `spec`.
pub fn synth_basis(spec: &SynthSpec) -> Result<SynthBasis> {
    spec.validate()?;
    Ok(draw_basis(spec, &mut SeededRng::new(spec.seed)))
}

fn noisy(base: impl Iterator<Item = f64>, shape: &[usize], noise: f64, rng: &mut SeededRng) -> Tensor {
    let data: Vec<f64> = base
        .map(|v| if noise > 0.0 { v + noise * rng.normal() } else { v })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<FeatureSequence>> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let basis = draw_basis(spec, &mut rng);
    let fshape = [spec.tokens, spec.feature_width];
    let mut out = Vec::with_capacity(spec.videos);
    for i in 0..spec.videos {
        let s = rng.uniform(MOS_RANGE.0, MOS_RANGE.1);
        let center = &basis.content_centers[rng.index(spec.clusters)];
        let frames = (0..spec.frames)
            .map(|_| {
                let features = noisy(
                    basis
                        .feature_offset
                        .data()
                        .iter()
                        .zip(basis.feature_slope.data())
                        .map(|(o, k)| o + s * k),
                    &fshape,
                    spec.noise,
                    &mut rng,
                );
                let content = noisy(
                    center.data().iter().copied(),
                    &[spec.content_width],
                    spec.noise,
                    &mut rng,
                );
                let distortion = noisy(
                    basis
                        .distortion_offset
                        .data()
                        .iter()
                        .zip(basis.distortion_slope.data())
                        .map(|(o, k)| o + s * k),
                    &[spec.distortion_width],
                    spec.noise,
                    &mut rng,
                );
                Frame {
                    features,
                    content,
                    distortion,
                }
            })
            .collect();
        out.push(FeatureSequence {
            id: format!("synth_{i:04}"),
            frames,
            mos: Some(s),
        });
    }
    Ok(out)
}
