//! Multi-level embedding for heterogeneous graphs.
//!
//! A typed graph is repeatedly coarsened by merging structurally similar
//! same-type nodes ([`coarsen`]), the coarsest graph is embedded with
//! meta-path guided random walks and skip-gram ([`embed_base`]), and the
//! resulting vectors are projected back level by level and corrected by a
//! relation-typed graph convolution trained once on the coarsest level
//! ([`refine`]). [`evaluate`] holds the node classification and link
//! prediction protocol used to judge the output, and [`pipeline`] wires the
//! stages together.

pub mod coarsen;
pub mod embed_base;
pub mod error;
pub mod evaluate;
pub mod hetgraph;
pub mod pipeline;
pub mod refine;
pub mod synth;

pub use error::{Error, Result, TypeMismatch};
pub use hetgraph::{EdgeTypeId, EmbeddingMatrix, HeteroGraph, NodeId, NodeTypeId};
