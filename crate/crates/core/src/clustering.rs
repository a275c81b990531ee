//! Blocked epsilon-neighborhood clustering.
//!
//! Two records land in the same match group when they agree exactly on every
//! block column and are linked by a chain of pairs, each within `epsilon`
//! under the chosen metric. This is DBSCAN with `min_pts = 1`: every record
//! is a core point, so the result is the connected components of the
//! within-block epsilon graph and does not depend on visiting order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::metrics::{DistanceMetric, Prepared};
use crate::records::{build_match_sentence, Dataset, MatchSentenceSpec, RecordId};
use crate::scalar::Scalar;
use crate::union_find::UnionFind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub metric: DistanceMetric,
    pub epsilon: f64,
    /// Empty means no blocking.
    #[serde(default)]
    pub block_columns: Vec<String>,
    /// When set, records whose match sentence is empty stay singletons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_spec: Option<MatchSentenceSpec>,
}

impl ClusterParams {
    pub fn new(metric: DistanceMetric, epsilon: f64) -> Self {
        ClusterParams {
            metric,
            epsilon,
            block_columns: Vec::new(),
            sentence_spec: None,
        }
    }

    pub fn with_blocks<S: Into<String>>(mut self, cols: impl IntoIterator<Item = S>) -> Self {
        self.block_columns = cols.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_sentence_spec(mut self, spec: MatchSentenceSpec) -> Self {
        self.sentence_spec = Some(spec);
        self
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::config(format!("epsilon must be >= 0, got {eps}")));
    }
    Ok(())
}

/// Partition of record ids into match groups (size >= 2) and singletons.
/// A group's id is its smallest member id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub groups: BTreeMap<RecordId, BTreeSet<RecordId>>,
    pub singletons: BTreeSet<RecordId>,
}

impl ClusterAssignment {
    /// Builds an assignment from arbitrary sets of ids; sets of size one
    /// become singletons.
    pub fn from_sets<I, S>(sets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = RecordId>,
    {
        let mut out = ClusterAssignment::default();
        for set in sets {
            let members: BTreeSet<RecordId> = set.into_iter().collect();
            match members.len() {
                0 => {}
                1 => {
                    out.singletons.extend(members);
                }
                _ => {
                    let key = members.iter().next().cloned().unwrap();
                    out.groups.insert(key, members);
                }
            }
        }
        out
    }

    pub(crate) fn from_union_find(ids: &[RecordId], uf: &mut UnionFind) -> Self {
        Self::from_sets(
            uf.sets()
                .into_iter()
                .map(|s| s.into_iter().map(|i| ids[i].clone())),
        )
    }

    pub fn len(&self) -> usize {
        self.singletons.len() + self.groups.values().map(BTreeSet::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Map from record id to group id; singletons map to themselves.
    pub fn labels(&self) -> HashMap<&RecordId, &RecordId> {
        let mut out = HashMap::with_capacity(self.len());
        for (gid, members) in &self.groups {
            for m in members {
                out.insert(m, gid);
            }
        }
        for s in &self.singletons {
            out.insert(s, s);
        }
        out
    }

    /// True when every group of `self` lies inside one group of `coarser`.
    pub fn refines(&self, coarser: &ClusterAssignment) -> bool {
        let labels = coarser.labels();
        self.groups.values().all(|members| {
            let mut it = members.iter().map(|m| labels.get(m));
            match it.next() {
                Some(Some(first)) => it.all(|l| l == Some(first)),
                _ => false,
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    pub max_group_size: usize,
    pub num_match_groups: usize,
}

pub fn group_stats(assignment: &ClusterAssignment) -> GroupStats {
    GroupStats {
        max_group_size: assignment
            .groups
            .values()
            .map(BTreeSet::len)
            .max()
            .unwrap_or(0),
        num_match_groups: assignment.groups.len(),
    }
}

/// Row indices grouped by exact agreement on the block columns, in order of
/// first appearance. Rows flagged in `excluded` are left out.
pub(crate) fn partition_rows(
    dataset: &Dataset,
    block_columns: &[String],
    excluded: Option<&[bool]>,
) -> Result<Vec<Vec<usize>>> {
    let cols = block_columns
        .iter()
        .map(|c| dataset.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    let mut index: HashMap<Vec<&str>, usize> = HashMap::new();
    let mut parts: Vec<Vec<usize>> = Vec::new();
    for (i, r) in dataset.records().iter().enumerate() {
        if excluded.is_some_and(|e| e[i]) {
            continue;
        }
        let key: Vec<&str> = cols.iter().map(|&c| r.value_at(c)).collect();
        let slot = *index.entry(key).or_insert_with(|| {
            parts.push(Vec::new());
            parts.len() - 1
        });
        parts[slot].push(i);
    }
    Ok(parts)
}

/// An edge of the epsilon graph between two dataset rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T> {
    pub a: u32,
    pub b: u32,
    pub distance: T,
}

/// Within-block pairs at distance `<= max_epsilon`, sorted by distance.
///
/// Serves any epsilon up to `max_epsilon` without recomputing distances.
#[derive(Debug, Clone)]
pub struct NeighborGraph<T> {
    ids: Vec<RecordId>,
    max_epsilon: f64,
    edges: Vec<Edge<T>>,
}

impl<T: Scalar> NeighborGraph<T> {
    pub fn build(
        matrix: &EmbeddingMatrix<T>,
        dataset: &Dataset,
        metric: DistanceMetric,
        max_epsilon: f64,
        block_columns: &[String],
        sentence_spec: Option<&MatchSentenceSpec>,
    ) -> Result<Self> {
        check_epsilon(max_epsilon)?;
        matrix.check_covers(dataset)?;
        if dataset.len() > u32::MAX as usize {
            return Err(Error::data("too many records"));
        }
        let excluded = match sentence_spec {
            Some(spec) => {
                spec.validate(dataset.schema())?;
                Some(
                    dataset
                        .records()
                        .iter()
                        .map(|r| build_match_sentence(r, spec).map(|s| s.is_empty()))
                        .collect::<Result<Vec<bool>>>()?,
                )
            }
            None => None,
        };
        let parts = partition_rows(dataset, block_columns, excluded.as_deref())?;
        let prepared = Prepared::new(matrix, metric, excluded.as_deref())?;
        let eps = T::from(max_epsilon).ok_or_else(|| Error::config("epsilon not representable"))?;

        let work: Vec<(usize, usize)> = parts
            .iter()
            .enumerate()
            .flat_map(|(p, rows)| (0..rows.len()).map(move |k| (p, k)))
            .collect();
        let mut edges: Vec<Edge<T>> = work
            .par_iter()
            .map(|&(p, k)| {
                let rows = &parts[p];
                let a = rows[k];
                rows[k + 1..]
                    .iter()
                    .filter_map(|&b| {
                        let d = prepared.distance(a, b);
                        (d <= eps).then_some(Edge {
                            a: a as u32,
                            b: b as u32,
                            distance: d,
                        })
                    })
                    .collect::<Vec<_>>()
            })
            .flatten_iter()
            .collect();
        edges.sort_by(|x, y| {
            x.distance
                .partial_cmp(&y.distance)
                .unwrap()
                .then((x.a, x.b).cmp(&(y.a, y.b)))
        });
        Ok(NeighborGraph {
            ids: matrix.record_ids().to_vec(),
            max_epsilon,
            edges,
        })
    }

    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    pub fn max_epsilon(&self) -> f64 {
        self.max_epsilon
    }

    fn threshold(&self, epsilon: f64) -> Result<T> {
        check_epsilon(epsilon)?;
        if epsilon > self.max_epsilon {
            return Err(Error::config(format!(
                "epsilon {epsilon} exceeds graph radius {}",
                self.max_epsilon
            )));
        }
        T::from(epsilon).ok_or_else(|| Error::config("epsilon not representable"))
    }

    pub fn components_at(&self, epsilon: f64) -> Result<ClusterAssignment> {
        let eps = self.threshold(epsilon)?;
        let mut uf = UnionFind::new(self.ids.len());
        for e in self.edges.iter().take_while(|e| e.distance <= eps) {
            uf.union(e.a as usize, e.b as usize);
        }
        Ok(ClusterAssignment::from_union_find(&self.ids, &mut uf))
    }

    /// Assignments for ascending `epsilons`, merging edges incrementally.
    pub fn sweep(&self, epsilons: &[f64]) -> Result<Vec<ClusterAssignment>> {
        let thresholds = epsilons
            .iter()
            .map(|&e| self.threshold(e))
            .collect::<Result<Vec<T>>>()?;
        if thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("sweep epsilons must be ascending"));
        }
        let mut uf = UnionFind::new(self.ids.len());
        let mut next = 0;
        let mut out = Vec::with_capacity(thresholds.len());
        for eps in thresholds {
            while next < self.edges.len() && self.edges[next].distance <= eps {
                uf.union(self.edges[next].a as usize, self.edges[next].b as usize);
                next += 1;
            }
            out.push(ClusterAssignment::from_union_find(&self.ids, &mut uf));
        }
        Ok(out)
    }
}

/// Groups the dataset's records by blocked epsilon-neighborhood connectivity.
pub fn cluster<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    dataset: &Dataset,
    params: &ClusterParams,
) -> Result<ClusterAssignment> {
    NeighborGraph::build(
        matrix,
        dataset,
        params.metric,
        params.epsilon,
        &params.block_columns,
        params.sentence_spec.as_ref(),
    )?
    .components_at(params.epsilon)
}

/// Writes `record_id,group_id,singleton` rows in the order of `order`.
pub fn write_assignment_csv<'a>(
    assignment: &ClusterAssignment,
    order: impl IntoIterator<Item = &'a RecordId>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let labels = assignment.labels();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["record_id", "group_id", "singleton"])
        .map_err(csv_err)?;
    let mut written = 0;
    for id in order {
        let gid = labels
            .get(id)
            .ok_or_else(|| Error::data(format!("record {id} missing from assignment")))?;
        let singleton = assignment.singletons.contains(id);
        w.write_record([id.to_string(), gid.to_string(), singleton.to_string()])
            .map_err(csv_err)?;
        written += 1;
    }
    if written != labels.len() {
        return Err(Error::data(format!(
            "assignment covers {} records, {written} written",
            labels.len()
        )));
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct AssignmentRow {
    record_id: String,
    group_id: String,
    singleton: bool,
}

pub fn read_assignment_csv(path: impl AsRef<Path>) -> Result<ClusterAssignment> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut groups: BTreeMap<RecordId, BTreeSet<RecordId>> = BTreeMap::new();
    let mut singletons = BTreeSet::new();
    for row in r.deserialize::<AssignmentRow>() {
        let row = row.map_err(csv_err)?;
        let id = RecordId::parse(&row.record_id);
        if row.singleton {
            if row.group_id != row.record_id {
                return Err(Error::data(format!(
                    "{}: singleton {id} has group {}",
                    path.display(),
                    row.group_id
                )));
            }
            singletons.insert(id);
        } else {
            groups
                .entry(RecordId::parse(&row.group_id))
                .or_default()
                .insert(id);
        }
    }
    let out = ClusterAssignment { groups, singletons };
    for (gid, members) in &out.groups {
        if members.len() < 2 || members.iter().next() != Some(gid) {
            return Err(Error::data(format!(
                "{}: malformed group {gid}",
                path.display()
            )));
        }
    }
    Ok(out)
}
