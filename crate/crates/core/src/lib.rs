//! Dispersion-based agglomerative clustering for unsupervised re-identification
//! style pseudo-labelling, with an alternating embedding-refinement loop and
//! retrieval evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distance;
pub mod embed;
pub mod engine;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod io;
pub mod proximity;
pub mod store;
pub mod synthetic;

pub use distance::{pairwise_distances, DistanceMatrix};
pub use engine::{cluster, relabel, run_stage, Criterion, EngineConfig, MergeEvent, StopRule, TieBreak};
pub use error::{Error, Result};
pub use proximity::{build_proximity, ClusterState, IntraMode, ProximityMatrix};
pub use store::{normalize_rows, pool_group_features, FeatureStore};
pub use synthetic::{generate_synthetic, SizeLaw, SyntheticSpec};
