//! PriorFormer: a blind video quality model that augments a transformer
//! encoder with content and distortion prior tokens, fuses the per-frame
//! quality representations with a GRU and pools frame scores with a
//! memory/current temporal pooling layer.
//!
//! This crate is `no_std` (it needs `alloc`) and carries everything that is
//! pure computation: the tensor graph with reverse-mode differentiation, the
//! model, training, metrics, the synthetic dataset generator and the byte
//! codecs for the `PFVF` feature files and `PFMP` parameter files. Reading
//! and writing actual files lives in the `priorformer` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataio;
pub mod encoder;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod math;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod synth;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use tensor::Tensor;
