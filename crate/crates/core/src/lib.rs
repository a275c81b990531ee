//! Record deduplication by clustering sentence embeddings.
//!
//! Records are rendered into "match sentences", embedded into a vector space,
//! and grouped by connected components of the epsilon-neighborhood graph
//! restricted to blocks of records that agree on chosen columns. A classic
//! blocking + Levenshtein pipeline is provided as a baseline, together with
//! pair-counting evaluation against ground-truth clusters.
//!
//! The numeric core is generic over the scalar type (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod baseline;
pub mod clustering;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod pipeline;
pub mod records;
pub mod scalar;
pub mod union_find;
pub mod viz;

pub use clustering::{cluster, group_stats, ClusterAssignment, ClusterParams, GroupStats};
pub use embedding::{EmbeddingMatrix, EmbeddingProvider};
pub use error::{Error, Result};
pub use evaluation::{pair_metrics, PairMetrics, SweepResult};
pub use metrics::DistanceMetric;
pub use records::{Dataset, MatchSentenceSpec, Record, RecordId};
pub use scalar::Scalar;

/// Embedding matrix at storage precision.
pub type EmbeddingMatrix32 = EmbeddingMatrix<f32>;
/// Embedding matrix widened to double precision.
pub type EmbeddingMatrix64 = EmbeddingMatrix<f64>;
