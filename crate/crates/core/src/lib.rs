//! Supervised smoothed manifold affinity learning.
//!
//! Offline, pairwise identity constraints on a labeled subset are propagated
//! over an affinity graph of the database (gallery plus labeled instances),
//! producing a manifold-smoothed similarity `Q`. Online, each probe is
//! embedded into that manifold with one vector-matrix product against a
//! precomputed factor, so no propagation runs at query time.

pub mod bench;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod io;
pub mod labels;
pub mod linalg;
pub mod pipeline;
pub mod propagation;
pub mod synthetic;

pub use embedding::{precompute_factor, query, OnlineFactor, ProbeMatcher, RankingResult};
pub use error::{Error, Result};
pub use exec::Execution;
pub use graph::{build_graph, AffinityGraph, DistanceMatrix, GraphConfig};
pub use io::{LabelRecord, ModelFile};
pub use labels::{build_labels, ConstraintLabels, DatasetLayout};
pub use linalg::Matrix;
pub use pipeline::{learn_model, LearnConfig};
pub use propagation::{iterate_accelerated, PropagationConfig, SmoothedModel};
