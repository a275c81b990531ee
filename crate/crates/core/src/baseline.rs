//! Classic entity-matching baseline: blocked candidate pairs, a Levenshtein
//! similarity threshold on one column, and connected components.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{partition_rows, ClusterAssignment};
use crate::error::{Error, Result};
use crate::records::{Dataset, RecordId};
use crate::union_find::UnionFind;

/// Unordered record pair, stored with `left < right`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidatePair {
    pub left: RecordId,
    pub right: RecordId,
}

impl CandidatePair {
    pub fn new(a: RecordId, b: RecordId) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(CandidatePair { left: a, right: b }),
            std::cmp::Ordering::Greater => Some(CandidatePair { left: b, right: a }),
            std::cmp::Ordering::Equal => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineParams {
    #[serde(default)]
    pub block_columns: Vec<String>,
    pub match_column: String,
    pub similarity_threshold: f64,
}

impl BaselineParams {
    /// Blocking on artist, Levenshtein on title at 0.9.
    pub fn musicbrainz() -> Self {
        BaselineParams {
            block_columns: vec!["artist".into()],
            match_column: "title".into(),
            similarity_threshold: 0.9,
        }
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::config(format!(
                "similarity_threshold must be in [0, 1], got {}",
                self.similarity_threshold
            )));
        }
        for c in self.block_columns.iter().chain([&self.match_column]) {
            if !dataset.schema().contains(c) {
                return Err(Error::config(format!(
                    "baseline column '{c}' not in schema"
                )));
            }
        }
        Ok(())
    }
}

/// Ordered pairs of distinct rows, `n^2 - n`.
pub fn candidate_count(n: u64) -> u64 {
    n.saturating_mul(n).saturating_sub(n)
}

/// Lazily yields every unordered pair that agrees on all block columns,
/// sorted by `(left, right)`.
pub fn generate_candidates<'a>(
    dataset: &'a Dataset,
    block_columns: &[String],
) -> Result<impl Iterator<Item = CandidatePair> + 'a> {
    let mut parts = partition_rows(dataset, block_columns, None)?;
    let records = dataset.records();
    let mut block_of = vec![0usize; records.len()];
    let mut rank_in_block = vec![0usize; records.len()];
    for (p, rows) in parts.iter_mut().enumerate() {
        rows.sort_by(|&a, &b| records[a].id.cmp(&records[b].id));
        for (k, &row) in rows.iter().enumerate() {
            block_of[row] = p;
            rank_in_block[row] = k;
        }
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].id.cmp(&records[b].id));

    Ok(order.into_iter().flat_map(move |row| {
        let members = &parts[block_of[row]];
        let left = records[row].id.clone();
        members[rank_in_block[row] + 1..]
            .iter()
            .map(|&other| CandidatePair {
                left: left.clone(),
                right: records[other].id.clone(),
            })
            .collect::<Vec<_>>()
    }))
}

/// Edit distance in Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn similarity_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein_chars(a, b) as f64 / longest as f64
}

/// `1 - edits / max(len)`; two empty strings are identical.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    similarity_chars(&a, &b)
}

/// Candidates whose match-column similarity reaches the threshold, sorted.
pub fn match_pairs<I>(
    dataset: &Dataset,
    candidates: I,
    params: &BaselineParams,
) -> Result<Vec<CandidatePair>>
where
    I: IntoIterator<Item = CandidatePair>,
    I::IntoIter: Send,
{
    params.validate(dataset)?;
    let col = dataset.column_index(&params.match_column)?;
    let chars: Vec<Vec<char>> = dataset
        .records()
        .iter()
        .map(|r| r.value_at(col).chars().collect())
        .collect();
    let row_of: HashMap<&RecordId, usize> =
        dataset.ids().enumerate().map(|(i, id)| (id, i)).collect();
    let lookup = |id: &RecordId| {
        row_of
            .get(id)
            .copied()
            .ok_or_else(|| Error::data(format!("candidate references unknown record {id}")))
    };
    let threshold = params.similarity_threshold;
    let mut matched = candidates
        .into_iter()
        .par_bridge()
        .filter_map(|pair| {
            let scored = lookup(&pair.left).and_then(|l| {
                let r = lookup(&pair.right)?;
                Ok(similarity_chars(&chars[l], &chars[r]) >= threshold)
            });
            match scored {
                Ok(true) => Some(Ok(pair)),
                Ok(false) => None,
                Err(e) => Some(Err(e)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    matched.par_sort_unstable();
    Ok(matched)
}

/// Connected components over matched pairs; records of `ids` that appear in
/// no pair are singletons.
pub fn baseline_cluster<'a>(
    ids: impl IntoIterator<Item = &'a RecordId>,
    pairs: &[CandidatePair],
) -> Result<ClusterAssignment> {
    let ids: Vec<RecordId> = ids.into_iter().cloned().collect();
    let index: HashMap<&RecordId, usize> = ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut uf = UnionFind::new(ids.len());
    for p in pairs {
        let (Some(&a), Some(&b)) = (index.get(&p.left), index.get(&p.right)) else {
            return Err(Error::data(format!(
                "pair ({}, {}) references an unknown record",
                p.left, p.right
            )));
        };
        uf.union(a, b);
    }
    Ok(ClusterAssignment::from_union_find(&ids, &mut uf))
}

/// Candidate generation, matching and clustering in one call.
pub fn run_baseline(
    dataset: &Dataset,
    params: &BaselineParams,
) -> Result<(Vec<CandidatePair>, ClusterAssignment)> {
    params.validate(dataset)?;
    let candidates = generate_candidates(dataset, &params.block_columns)?;
    let matched = match_pairs(dataset, candidates, params)?;
    let assignment = baseline_cluster(dataset.ids(), &matched)?;
    Ok((matched, assignment))
}
