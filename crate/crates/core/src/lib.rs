//! Training graph node classifiers under label noise by reweighting each
//! labeled node with its semantic homogeneity: how similar its learned
//! representation is to anchors chosen by label agreement and by graph
//! distance.
//!
//! The crate is organized bottom-up:
//!
//! - [`graph`]: CSR graphs, GCN propagation weights, hop-bounded BFS.
//! - [`nn`]: two-layer GCN, exact gradients, Adam, finite-difference checks.
//! - [`noise`]: uniform, pair and asymmetric label corruption.
//! - [`anchors`]: candidate pools, top-k anchor selection, homogeneity scores.
//! - [`trainer`]: the training loop, ablation variants and benchmark harness.
//! - [`synth`]: planted-partition benchmark graphs.

pub mod anchors;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use anchors::{AnchorPool, AnchorSet, CandidateSets, HomogeneityScores, ScoreParams};
pub use dataset::{Dataset, GraphFile, Split};
pub use error::{DreamError, Result};
pub use graph::{Graph, NormalizedAdjacency};
pub use matrix::Matrix;
pub use nn::{AdamState, ForwardCache, ModelParams};
pub use noise::{LabelState, NoiseKind, NoiseSpec};
pub use synth::SynthSpec;
pub use trainer::{Checkpoint, EpochMetrics, RunResult, TrainConfig, Variant};
