//! Hierarchical graph learning for binary vulnerability classification of
//! code property graphs.
//!
//! The pipeline: adaptive top-k pooling shrinks large graphs, stacked
//! GCN + transformer blocks encode the survivors, a mean readout feeds a
//! small classification head.

pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod ops;
pub mod sapool;
pub mod synth;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use graph::{LabeledGraph, NormalizedAdjacency};
