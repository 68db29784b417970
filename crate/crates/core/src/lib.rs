//! Hop-interaction graph learning.
//!
//! Multi-hop features are propagated once from a sparse graph
//! ([`hops::precompute_hops`]); a classifier then treats each node's hop
//! features as a short token sequence, mixes them with attention (or one of
//! the simpler interaction kinds), fuses them and predicts the class.
//! Training never touches the graph.

pub mod alloc;
pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod hops;
pub mod model;
pub mod objectives;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
