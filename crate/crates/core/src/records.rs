//! Tabular record ingestion and match-sentence construction.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{fnv1a, FNV_OFFSET};
use crate::error::{Error, Result};

/// Stable record identifier.
///
/// Canonical unsigned integers sort numerically and before any textual id,
/// so ordinal ids order the way rows do.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecordId {
    Num(u64),
    Text(String),
}

impl RecordId {
    pub fn parse(raw: &str) -> Self {
        match raw.parse::<u64>() {
            Ok(n) if n.to_string() == raw => RecordId::Num(n),
            _ => RecordId::Text(raw.to_string()),
        }
    }
}

impl From<u64> for RecordId {
    fn from(n: u64) -> Self {
        RecordId::Num(n)
    }
}

impl From<&str> for RecordId {
    fn from(s: &str) -> Self {
        RecordId::parse(s)
    }
}

impl FromStr for RecordId {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(RecordId::parse(s))
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordId::Num(n) => write!(f, "{n}"),
            RecordId::Text(s) => f.write_str(s),
        }
    }
}

impl Serialize for RecordId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecordId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(RecordId::parse(&raw))
    }
}

/// One row of a dataset. Attribute names are shared with the owning dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: RecordId,
    schema: Arc<[String]>,
    values: Vec<String>,
    pub truth_cluster: Option<String>,
}

impl Record {
    pub fn new(
        id: RecordId,
        schema: Arc<[String]>,
        values: Vec<String>,
        truth_cluster: Option<String>,
    ) -> Result<Self> {
        if values.len() != schema.len() {
            return Err(Error::data(format!(
                "record {id}: {} values for {} columns",
                values.len(),
                schema.len()
            )));
        }
        Ok(Record {
            id,
            schema,
            values,
            truth_cluster,
        })
    }

    pub fn get(&self, column: &str) -> Option<&str> {
        self.schema
            .iter()
            .position(|c| c == column)
            .map(|i| self.values[i].as_str())
    }

    pub fn value_at(&self, index: usize) -> &str {
        &self.values[index]
    }

    pub fn attributes(&self) -> impl Iterator<Item = (&str, &str)> {
        self.schema
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(String::as_str))
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

/// Ingested table. Record order is file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    schema: Arc<[String]>,
    records: Vec<Record>,
}

impl Dataset {
    /// Builds a dataset from rows of values aligned with `schema`.
    pub fn from_rows<I>(name: impl Into<String>, schema: Vec<String>, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (RecordId, Vec<String>, Option<String>)>,
    {
        let schema: Arc<[String]> = schema.into();
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for (id, values, truth) in rows {
            if !seen.insert(id.clone()) {
                return Err(Error::data(format!("duplicate record id {id}")));
            }
            records.push(Record::new(id, schema.clone(), values, truth)?);
        }
        Ok(Dataset {
            name: name.into(),
            schema,
            records,
        })
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn column_index(&self, column: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::data(format!("unknown column '{column}' in {}", self.name)))
    }

    pub fn ids(&self) -> impl Iterator<Item = &RecordId> {
        self.records.iter().map(|r| &r.id)
    }

    /// Subset made of whole truth clusters, picked in a seeded hash order
    /// while they still fit under `target` records. Records without a truth
    /// label count as clusters of one. Record order is preserved.
    pub fn sample_truth_clusters(&self, target: usize, seed: u64) -> Dataset {
        let keys: Vec<String> = self.records.iter().map(cluster_key).collect();
        let mut sizes: HashMap<&str, usize> = HashMap::new();
        for k in &keys {
            *sizes.entry(k).or_default() += 1;
        }
        let seeded = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
        let mut order: Vec<&str> = sizes.keys().copied().collect();
        order.sort_by_key(|k| (fnv1a(seeded, k.as_bytes()), *k));
        let mut keep = HashSet::new();
        let mut total = 0;
        for k in order {
            if total + sizes[k] <= target {
                total += sizes[k];
                keep.insert(k);
            }
        }
        Dataset {
            name: format!("{}-sample{target}", self.name),
            schema: self.schema.clone(),
            records: self
                .records
                .iter()
                .zip(&keys)
                .filter(|(_, k)| keep.contains(k.as_str()))
                .map(|(r, _)| r.clone())
                .collect(),
        }
    }

    /// Record count, schema and a content digest over ids, values and truth labels.
    pub fn fingerprint(&self) -> Fingerprint {
        let mut schema_hash = Sha256::new();
        for col in self.schema.iter() {
            schema_hash.update(col.as_bytes());
            schema_hash.update([0u8]);
        }
        let mut content = Sha256::new();
        for r in &self.records {
            content.update(r.id.to_string().as_bytes());
            content.update([0x1e]);
            for v in &r.values {
                content.update(v.as_bytes());
                content.update([0x1f]);
            }
            if let Some(t) = &r.truth_cluster {
                content.update(t.as_bytes());
            }
            content.update([0x1d]);
        }
        Fingerprint {
            records: self.records.len(),
            schema: self.schema.to_vec(),
            schema_hash: hex(&schema_hash.finalize()),
            content_hash: hex(&content.finalize()),
        }
    }
}

fn cluster_key(r: &Record) -> String {
    match &r.truth_cluster {
        Some(t) => format!("t:{t}"),
        None => format!("r:{}", r.id),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub records: usize,
    pub schema: Vec<String>,
    pub schema_hash: String,
    pub content_hash: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a headed, comma-delimited UTF-8 CSV.
///
/// Without `id_column`, ids are 0-based row ordinals. A non-empty cell in
/// `truth_column` becomes the record's ground-truth cluster.
pub fn load_csv(
    path: impl AsRef<Path>,
    id_column: Option<&str>,
    truth_column: Option<&str>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let schema: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |col: &str| {
        schema
            .iter()
            .position(|c| c == col)
            .ok_or_else(|| Error::data(format!("{}: no column '{col}'", path.display())))
    };
    let id_idx = id_column.map(find).transpose()?;
    let truth_idx = truth_column.map(find).transpose()?;

    let mut rows = Vec::new();
    for (ordinal, row) in reader.records().enumerate() {
        let row = row.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => Error::data(format!(
                "{}: data row {} has {len} fields, header has {expected_len}",
                path.display(),
                ordinal + 1
            )),
            _ => csv_err(e),
        })?;
        let values: Vec<String> = row.iter().map(str::to_string).collect();
        let id = match id_idx {
            Some(i) => RecordId::parse(&values[i]),
            None => RecordId::Num(ordinal as u64),
        };
        let truth = truth_idx
            .map(|i| values[i].clone())
            .filter(|t| !t.is_empty());
        rows.push((id, values, truth));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::from_rows(name, schema, rows).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes the dataset's schema and values back out as CSV.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(dataset.schema()).map_err(csv_err)?;
    for r in dataset.records() {
        w.write_record(r.values()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns concatenated into the text that gets embedded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchSentenceSpec {
    pub columns: Vec<String>,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_separator() -> String {
    " ".to_string()
}

impl MatchSentenceSpec {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        MatchSentenceSpec {
            columns: columns.into_iter().map(Into::into).collect(),
            separator: default_separator(),
        }
    }

    /// The six Musicbrainz fields.
    pub fn musicbrainz() -> Self {
        Self::new(["title", "length", "artist", "album", "year", "language"])
    }

    pub fn validate(&self, schema: &[String]) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::config("match sentence needs at least one column"));
        }
        if self.separator.is_empty() {
            return Err(Error::config("match sentence separator is empty"));
        }
        for c in &self.columns {
            if !schema.contains(c) {
                return Err(Error::config(format!(
                    "match sentence column '{c}' not in schema"
                )));
            }
        }
        Ok(())
    }
}

/// Joins the selected columns with the separator, then collapses separator runs
/// and trims separators at both ends.
pub fn build_match_sentence(record: &Record, spec: &MatchSentenceSpec) -> Result<String> {
    let mut parts = Vec::with_capacity(spec.columns.len());
    for c in &spec.columns {
        let v = record
            .get(c)
            .ok_or_else(|| Error::data(format!("record {}: no column '{c}'", record.id)))?;
        parts.push(v);
    }
    let joined = parts.join(&spec.separator);
    Ok(collapse_separator(&joined, &spec.separator))
}

fn collapse_separator(s: &str, sep: &str) -> String {
    s.split(sep)
        .filter(|tok| !tok.is_empty())
        .collect::<Vec<_>>()
        .join(sep)
}

/// Match sentences for every record, in dataset order.
pub fn match_sentences(dataset: &Dataset, spec: &MatchSentenceSpec) -> Result<Vec<String>> {
    spec.validate(dataset.schema())?;
    dataset
        .records()
        .iter()
        .map(|r| build_match_sentence(r, spec))
        .collect()
}
