//! Personalized hashtag recommendation for micro-videos with a graph
//! convolutional network over a user / hashtag / video tripartite graph.
//!
//! The crate covers the graph, a small dense-math layer with hand-written
//! gradients, the model forward and backward passes, BPR training, ranking
//! evaluation, file formats and a command line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use graph::{build_graph, Counts, TaggingTriple, TripartiteGraph};
pub use model::{GcnPhr, ModelConfig};
