//! Temporal capsule networks for 1D signals.
//!
//! The crate bundles a small define-by-run differentiation engine
//! ([`tensor`]), capsule primitives ([`capsule`]), the two-cell temporal
//! capsule architecture with its reconstruction decoder ([`model`]), data
//! handling ([`data`]), training ([`train`]) and checkpoints
//! ([`checkpoint`]).
//!
//! Numeric code is generic over [`Scalar`]; the `*64` aliases below are
//! what the CLI and the tests use.

pub mod capsule;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod model;
pub mod optim;
mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Graph, Tensor, Var};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Model64 = model::Model<f64>;
pub type ModelParams64 = model::ModelParams<f64>;

pub use checkpoint::{load_checkpoint, save_checkpoint};
