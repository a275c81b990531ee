//! Plot-ready exports: the epsilon/F-score curve and a 2D projection of the
//! embedding space colored by nearest-neighbor distance.

use std::path::Path;
use std::time::Duration;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::evaluation::SweepResult;
use crate::metrics::{nearest_neighbor_distances, DistanceMetric};
use crate::records::RecordId;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectedPoint {
    pub record_id: RecordId,
    pub x: f64,
    pub y: f64,
    pub nn_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Projection {
    Pca,
    /// UMAP (or anything else) computed by the sidecar's `/project`.
    External {
        endpoint: String,
        n_neighbors: usize,
    },
}

pub fn export_sweep_curve(sweep: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if sweep.rows.is_empty() {
        return Err(Error::data("empty sweep"));
    }
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epsilon", "f_score"]).map_err(csv_err)?;
    for r in &sweep.rows {
        w.write_record([r.epsilon.to_string(), r.metrics.f_score.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn export_projection(points: &[ProjectedPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["record_id", "x", "y", "nn_distance"])
        .map_err(csv_err)?;
    for p in points {
        w.write_record([
            p.record_id.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.nn_distance.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// 2D coordinates for every record, each carrying its cosine
/// nearest-neighbor distance.
pub fn project_2d<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    method: &Projection,
) -> Result<Vec<ProjectedPoint>> {
    if matrix.len() < 3 {
        return Err(Error::data(format!(
            "projection needs at least 3 records, got {}",
            matrix.len()
        )));
    }
    let coords = match method {
        Projection::Pca => pca_2d(matrix),
        Projection::External {
            endpoint,
            n_neighbors,
        } => external_2d(matrix, endpoint, *n_neighbors)?,
    };
    let nn = nearest_neighbor_distances(matrix, DistanceMetric::Cosine)?;
    Ok(nn
        .into_iter()
        .zip(coords)
        .map(|((record_id, d), (x, y))| ProjectedPoint {
            record_id,
            x,
            y,
            nn_distance: d.to_f64_lossy(),
        })
        .collect())
}

const COV_CHUNK: usize = 2048;

/// Projection onto the top two principal components of the centered data.
/// Each component's largest-magnitude loading is made positive.
pub fn pca_2d<T: Scalar>(matrix: &EmbeddingMatrix<T>) -> Vec<(f64, f64)> {
    let (n, dim) = (matrix.len(), matrix.dim());
    let mut mean = vec![0f64; dim];
    for row in matrix.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.to_f64_lossy();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = |i: usize| -> Vec<f64> {
        matrix
            .row(i)
            .iter()
            .zip(&mean)
            .map(|(v, m)| v.to_f64_lossy() - m)
            .collect()
    };

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut start = 0;
    while start < n {
        let end = (start + COV_CHUNK).min(n);
        let data: Vec<f64> = (start..end).flat_map(&centered).collect();
        let chunk = DMatrix::from_row_slice(end - start, dim, &data);
        cov += chunk.transpose() * &chunk;
        start = end;
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let component = |k: usize| -> Vec<f64> {
        let Some(&col) = order.get(k) else {
            return vec![0.0; dim];
        };
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let pivot = v.iter().enumerate().fold(
            0,
            |best, (i, x)| if x.abs() > v[best].abs() { i } else { best },
        );
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let (pc1, pc2) = (component(0), component(1));
    (0..n)
        .map(|i| {
            let c = centered(i);
            let dot = |p: &[f64]| c.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
            (dot(&pc1), dot(&pc2))
        })
        .collect()
}

#[derive(Serialize)]
struct ProjectRequest {
    vectors: Vec<Vec<f64>>,
    n_neighbors: usize,
}

#[derive(Deserialize)]
struct ProjectResponse {
    points: Vec<[f64; 2]>,
}

fn external_2d<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    endpoint: &str,
    n_neighbors: usize,
) -> Result<Vec<(f64, f64)>> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(3600)))
        .build()
        .into();
    let url = format!("{}/project", endpoint.trim_end_matches('/'));
    let body = ProjectRequest {
        vectors: matrix
            .rows()
            .map(|r| r.iter().map(|v| v.to_f64_lossy()).collect())
            .collect(),
        n_neighbors,
    };
    let resp: ProjectResponse = agent
        .post(&url)
        .send_json(&body)
        .and_then(|mut r| r.body_mut().read_json())
        .map_err(|e| Error::provider(format!("POST {url}: {e}")))?;
    if resp.points.len() != matrix.len() {
        return Err(Error::provider(format!(
            "sidecar returned {} points for {} vectors",
            resp.points.len(),
            matrix.len()
        )));
    }
    Ok(resp.points.into_iter().map(|[x, y]| (x, y)).collect())
}
