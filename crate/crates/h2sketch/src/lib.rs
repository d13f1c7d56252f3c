//! Linear-complexity bottom-up sketching construction of strongly-admissible
//! H^2 matrices, with adaptive sampling, fast matrix-vector products, entry
//! extraction and low-rank-update recompression.
//!
//! The compression driver needs two views of the target operator: a black-box
//! multiply `Y = K * Omega` (a [`sampler::Sampler`]) and an entry oracle for
//! small subblocks (a [`kernel::EntryEvaluator`]). Geometry enters only through
//! the cluster tree and the admissibility-driven block partition.

pub mod cluster;
pub mod construct;
pub mod error;
pub mod geometry;
pub mod h2;
pub mod id;
pub mod kernel;
pub mod mtree;
pub mod norm;
pub(crate) mod par;
pub mod qr;
pub mod rng;
pub mod sampler;

pub use cluster::{ClusterId, ClusterNode, ClusterTree};
pub use construct::{construct, ConstructionConfig, ConstructionStats};
pub use error::{Error, Result};
pub use geometry::{BoundingBox, PointSet};
pub use h2::H2Matrix;
pub use id::{is_converged, row_id, IdResult};
pub use kernel::{EntryEvaluator, KernelEvaluator, KernelSpec};
pub use mtree::{build_matrix_tree, is_admissible, BlockStatus, MatrixTree};
pub use norm::{estimate_operator_norm, estimate_rel_error};
pub use sampler::{DenseSampler, KernelSampler, LowRankUpdate, Sampler};
