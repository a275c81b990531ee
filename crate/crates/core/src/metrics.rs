//! L2 and cosine distances, and exhaustive nearest-neighbor search.
//!
//! Both kernels accumulate in a fixed lane order that does not depend on
//! argument order, so `distance(m, u, v) == distance(m, v, u)` holds exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::records::RecordId;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    L2,
    /// `1 - cos(u, v)`, in `[0, 2]`.
    Cosine,
}

impl DistanceMetric {
    pub fn name(self) -> &'static str {
        match self {
            DistanceMetric::L2 => "l2",
            DistanceMetric::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "euclidean" => Ok(DistanceMetric::L2),
            "cosine" => Ok(DistanceMetric::Cosine),
            other => Err(Error::config(format!("unknown metric '{other}'"))),
        }
    }
}

impl std::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

const LANES: usize = 8;

#[inline]
pub(crate) fn dot<T: Scalar>(u: &[T], v: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = u.len() / LANES * LANES;
    for (cu, cv) in u[..chunks]
        .chunks_exact(LANES)
        .zip(v[..chunks].chunks_exact(LANES))
    {
        for k in 0..LANES {
            acc[k] = acc[k] + cu[k] * cv[k];
        }
    }
    let mut tail = T::zero();
    for (a, b) in u[chunks..].iter().zip(&v[chunks..]) {
        tail = tail + *a * *b;
    }
    reduce(acc) + tail
}

#[inline]
pub(crate) fn squared_l2<T: Scalar>(u: &[T], v: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = u.len() / LANES * LANES;
    for (cu, cv) in u[..chunks]
        .chunks_exact(LANES)
        .zip(v[..chunks].chunks_exact(LANES))
    {
        for k in 0..LANES {
            let d = cu[k] - cv[k];
            acc[k] = acc[k] + d * d;
        }
    }
    let mut tail = T::zero();
    for (a, b) in u[chunks..].iter().zip(&v[chunks..]) {
        let d = *a - *b;
        tail = tail + d * d;
    }
    reduce(acc) + tail
}

#[inline]
fn reduce<T: Scalar>(acc: [T; LANES]) -> T {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Cosine distance from a dot product and the two squared norms.
#[inline]
pub(crate) fn cosine_from_parts<T: Scalar>(dot: T, sq_norm_u: T, sq_norm_v: T) -> T {
    // sqrt(a*b) keeps the self-distance exactly zero.
    let d = T::one() - dot / (sq_norm_u * sq_norm_v).sqrt();
    d.max(T::zero())
}

pub fn distance<T: Scalar>(metric: DistanceMetric, u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::data(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    match metric {
        DistanceMetric::L2 => Ok(squared_l2(u, v).sqrt()),
        DistanceMetric::Cosine => {
            let nu = dot(u, u);
            let nv = dot(v, v);
            if nu == T::zero() || nv == T::zero() {
                return Err(Error::data("cosine distance of a zero vector"));
            }
            Ok(cosine_from_parts(dot(u, v), nu, nv))
        }
    }
}

/// Per-row data that lets a metric be evaluated without recomputing norms.
pub(crate) struct Prepared<'a, T: Scalar> {
    matrix: &'a EmbeddingMatrix<T>,
    metric: DistanceMetric,
    sq_norms: Vec<T>,
}

impl<'a, T: Scalar> Prepared<'a, T> {
    /// Rows flagged in `skip_zero_check` may be zero under cosine; they must
    /// never be passed to `distance`.
    pub fn new(
        matrix: &'a EmbeddingMatrix<T>,
        metric: DistanceMetric,
        skip_zero_check: Option<&[bool]>,
    ) -> Result<Self> {
        let sq_norms: Vec<T> = (0..matrix.len())
            .map(|i| {
                let r = matrix.row(i);
                dot(r, r)
            })
            .collect();
        if metric == DistanceMetric::Cosine {
            for (i, n) in sq_norms.iter().enumerate() {
                let skipped = skip_zero_check.is_some_and(|s| s[i]);
                if *n == T::zero() && !skipped {
                    return Err(Error::data(format!(
                        "record {}: zero vector under cosine metric",
                        matrix.record_ids()[i]
                    )));
                }
            }
        }
        Ok(Prepared {
            matrix,
            metric,
            sq_norms,
        })
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> T {
        let (u, v) = (self.matrix.row(i), self.matrix.row(j));
        match self.metric {
            DistanceMetric::L2 => squared_l2(u, v).sqrt(),
            DistanceMetric::Cosine => {
                cosine_from_parts(dot(u, v), self.sq_norms[i], self.sq_norms[j])
            }
        }
    }
}

/// Distance from every record to its closest other record.
pub fn nearest_neighbor_distances<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    metric: DistanceMetric,
) -> Result<Vec<(RecordId, T)>> {
    let n = matrix.len();
    if n < 2 {
        return Err(Error::data(format!(
            "nearest neighbors need at least 2 records, got {n}"
        )));
    }
    let prepared = Prepared::new(matrix, metric, None)?;
    let mins: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| prepared.distance(i, j))
                .fold(T::infinity(), T::min)
        })
        .collect();
    Ok(matrix.record_ids().iter().cloned().zip(mins).collect())
}
