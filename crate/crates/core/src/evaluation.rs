//! Pair-counting evaluation against ground-truth clusters, epsilon sweeps,
//! and report rendering.
//!
//! Every unordered record pair is classified by whether the prediction and
//! the truth put it in the same cluster. Counts are computed from the
//! contingency table rather than by enumerating pairs:
//! `TP = sum C(n_ij, 2)`, `TP + FP = sum C(|g|, 2)`, `TP + FN = sum C(|t|, 2)`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::clustering::{group_stats, ClusterAssignment, GroupStats, NeighborGraph};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::metrics::DistanceMetric;
use crate::records::{Dataset, Fingerprint, MatchSentenceSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Pairs declared duplicate by the prediction, `tp + fp`.
    pub declared_duplicates: u64,
}

impl PairMetrics {
    /// Zero denominators give 0 for precision, recall and F-score.
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_score = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PairMetrics {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f_score,
            declared_duplicates: tp + fp,
        }
    }

    pub fn total_pairs(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn pairs_of(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Pair metrics for two labelings of the same items, aligned by index.
pub fn pair_metrics_from_labels<P, T>(predicted: &[P], truth: &[T]) -> PairMetrics
where
    P: Hash + Eq,
    T: Hash + Eq,
{
    assert_eq!(predicted.len(), truth.len(), "labelings must align");
    let mut cells: HashMap<(&P, &T), u64> = HashMap::new();
    let mut pred_sizes: HashMap<&P, u64> = HashMap::new();
    let mut truth_sizes: HashMap<&T, u64> = HashMap::new();
    for (p, t) in predicted.iter().zip(truth) {
        *cells.entry((p, t)).or_default() += 1;
        *pred_sizes.entry(p).or_default() += 1;
        *truth_sizes.entry(t).or_default() += 1;
    }
    let tp: u64 = cells.values().map(|&n| pairs_of(n)).sum();
    let declared: u64 = pred_sizes.values().map(|&n| pairs_of(n)).sum();
    let actual: u64 = truth_sizes.values().map(|&n| pairs_of(n)).sum();
    let total = pairs_of(predicted.len() as u64);
    let (fp, fn_) = (declared - tp, actual - tp);
    let tn = total - tp - fp - fn_;
    let m = PairMetrics::from_counts(tp, fp, tn, fn_);
    assert_eq!(m.total_pairs(), total, "pair counts must cover C(N, 2)");
    m
}

/// Scores a predicted assignment against the dataset's truth labels.
pub fn pair_metrics(predicted: &ClusterAssignment, dataset: &Dataset) -> Result<PairMetrics> {
    let labels = predicted.labels();
    if labels.len() != dataset.len() {
        return Err(Error::data(format!(
            "assignment covers {} records, dataset has {}",
            labels.len(),
            dataset.len()
        )));
    }
    let mut pred = Vec::with_capacity(dataset.len());
    let mut truth = Vec::with_capacity(dataset.len());
    for r in dataset.records() {
        let t = r
            .truth_cluster
            .as_deref()
            .ok_or_else(|| Error::data(format!("record {} has no truth cluster", r.id)))?;
        let p = labels
            .get(&r.id)
            .ok_or_else(|| Error::data(format!("record {} missing from assignment", r.id)))?;
        pred.push(*p);
        truth.push(t);
    }
    Ok(pair_metrics_from_labels(&pred, &truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub metrics: PairMetrics,
    pub stats: GroupStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metric: DistanceMetric,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .fold(None, |best: Option<&SweepRow>, r| match best {
                Some(b) if b.metrics.f_score >= r.metrics.f_score => Some(b),
                _ => Some(r),
            })
    }
}

/// Clusters and scores the dataset at each epsilon, computing pair
/// distances once for the largest.
pub fn epsilon_sweep<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    dataset: &Dataset,
    metric: DistanceMetric,
    epsilons: &[f64],
    block_columns: &[String],
    sentence_spec: Option<&MatchSentenceSpec>,
) -> Result<SweepResult> {
    let Some(&max_eps) = epsilons.last() else {
        return Err(Error::config("epsilon sweep needs at least one epsilon"));
    };
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("sweep epsilons must be strictly increasing"));
    }
    let graph = NeighborGraph::build(
        matrix,
        dataset,
        metric,
        max_eps,
        block_columns,
        sentence_spec,
    )?;
    let assignments = graph.sweep(epsilons)?;
    let rows = epsilons
        .iter()
        .zip(&assignments)
        .map(|(&epsilon, a)| {
            Ok(SweepRow {
                epsilon,
                metrics: pair_metrics(a, dataset)?,
                stats: group_stats(a),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { metric, rows })
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub epsilon: Option<f64>,
    pub metrics: PairMetrics,
}

impl ReportRow {
    pub fn from_sweep(method: &str, sweep: &SweepResult) -> Vec<ReportRow> {
        sweep
            .rows
            .iter()
            .map(|r| ReportRow {
                method: method.to_string(),
                epsilon: Some(r.epsilon),
                metrics: r.metrics,
            })
            .collect()
    }
}

const HEADER: [&str; 7] = ["method", "epsilon", "Dup", "TP", "FP", "FN", "F-score"];

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Plain-text table; F-scores to two decimals.
pub fn render_table(rows: &[ReportRow]) -> String {
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.epsilon
                    .map_or_else(|| "-".to_string(), |e| format!("{e}")),
                thousands(r.metrics.declared_duplicates),
                thousands(r.metrics.tp),
                thousands(r.metrics.fp),
                thousands(r.metrics.fn_),
                format!("{:.2}", r.metrics.f_score),
            ]
        })
        .collect();
    let mut widths = HEADER.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        for (i, (c, w)) in row.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(&mut out, &HEADER.map(str::to_string));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule);
    for row in &cells {
        line(&mut out, row);
    }
    out.push_str("Dup = declared duplicate pairs (TP + FP)\n");
    out
}

/// Machine-readable record of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub params: serde_json::Value,
    pub dataset: Fingerprint,
    pub provider_tag: Option<String>,
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
