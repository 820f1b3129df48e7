//! Self-supervised graph representation learning driven by spectral
//! contribution scores.
//!
//! The pipeline: build the normalized Laplacian, take its smallest-K
//! eigenpairs, score how much low-frequency mass each edge and node
//! carries, corrupt the graph by preferentially masking/dropping the
//! highest scorers, and train a position-aware masked autoencoder whose
//! three corrupted views are tied together by a contrastive alignment
//! loss. Frozen-encoder probes measure the result.
//!
//! Everything numeric is generic over the scalar type ([`Scalar`],
//! `f32`/`f64`); the `*64` aliases below are the default instantiation
//! used by the CLI and the file formats.

pub mod config;
pub mod corruption;
mod error;
pub mod evalkit;
pub mod frequency;
pub mod graph;
pub mod model;
pub mod spectral;
pub mod testutil;
pub mod trainer;

pub use error::{Error, Result};
pub use fcg_tensor::{Adam, ParamId, ParamStore, Scalar, Tape, Tensor, TensorId};

/// Default 64-bit instantiations of the pipeline types.
pub type Graph64 = graph::Graph<f64>;
pub type LaplacianView64 = graph::LaplacianView<f64>;
pub type SpectralBundle64 = spectral::SpectralBundle<f64>;
pub type PositionMatrix64 = spectral::PositionMatrix<f64>;
pub type EdgeFeatureMatrix64 = spectral::EdgeFeatureMatrix<f64>;
pub type ContributionScores64 = frequency::ContributionScores<f64>;

/// 32-bit variants for precision/memory trade-offs.
pub type Graph32 = graph::Graph<f32>;
pub type SpectralBundle32 = spectral::SpectralBundle<f32>;
pub type ContributionScores32 = frequency::ContributionScores<f32>;
