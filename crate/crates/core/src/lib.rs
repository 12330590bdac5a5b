//! Node classification on text-attributed graphs.
//!
//! Graph containers and sparse kernels, hand-written forward/backward
//! layers (GCN, graph transformer, MLP), Adam with early-stopped training,
//! text feature pipelines, and a benchmark driver that crosses feature
//! encoders with architectures.


pub mod bench;
pub mod dataset;
pub mod error;
pub mod features;

pub mod gradcheck;
pub mod graph;
pub mod models;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
