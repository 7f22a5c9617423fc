//! Federated GCN training simulator with geometry-regulated aggregation.
//!
//! The crate is generic over the floating point scalar ([`Scalar`]); the
//! `*64` aliases below fix it to `f64`, which is what the CLI and the frozen
//! numerical tolerances use.

pub mod client;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod server;

pub use scalar::Scalar;

pub type Graph64 = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type NormalizedAdjacency64 = graph::NormalizedAdjacency<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type ParameterSet64 = gnn::ParameterSet<f64>;
pub type FlatVector64 = gnn::FlatVector<f64>;
