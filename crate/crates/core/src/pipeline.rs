//! Config-driven pipeline stages behind the `dedup` command line tool.
//!
//! Each stage reads its inputs from the run's output directory, writes its
//! outputs atomically (temp file + rename) and leaves a `<stage>.manifest.json`
//! describing the run. Everything except the manifests' timing fields is a
//! deterministic function of config and inputs.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baseline::{run_baseline, BaselineParams};
use crate::clustering::{
    cluster, group_stats, read_assignment_csv, write_assignment_csv, ClusterParams, GroupStats,
};
use crate::embedding::{
    embed_dataset, load_embeddings, save_embeddings, EmbeddingMatrix, EmbeddingProvider,
    FileProvider, HttpProvider, MockProvider,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    epsilon_sweep, pair_metrics, render_table, ReportRow, RunReport, SweepResult,
};
use crate::metrics::DistanceMetric;
use crate::records::{load_csv, Dataset, Fingerprint, MatchSentenceSpec};
use crate::viz::{export_projection, export_sweep_curve, project_2d, Projection};

pub const EMBEDDINGS_FILE: &str = "embeddings.emb";
pub const ASSIGNMENT_FILE: &str = "assignment.csv";
pub const GROUP_STATS_FILE: &str = "group_stats.json";
pub const BASELINE_ASSIGNMENT_FILE: &str = "baseline_assignment.csv";
pub const BASELINE_STATS_FILE: &str = "baseline_stats.json";
pub const EVAL_JSON_FILE: &str = "eval.json";
pub const EVAL_TABLE_FILE: &str = "eval.txt";
pub const SWEEP_JSON_FILE: &str = "sweep.json";
pub const SWEEP_TABLE_FILE: &str = "sweep.txt";
pub const SWEEP_CURVE_FILE: &str = "sweep_curve.csv";
pub const PROJECTION_FILE: &str = "projection.csv";

pub const PROPOSED_METHOD: &str = "ProposedMethod";
pub const BASELINE_METHOD: &str = "NBA1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub sentence: MatchSentenceSpec,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default = "BaselineParams::musicbrainz")]
    pub baseline: BaselineParams,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub viz: VizConfig,
    pub output_dir: PathBuf,
    /// Seed for the mock provider.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 means available parallelism.
    #[serde(default)]
    pub workers: usize,
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub id_column: Option<String>,
    #[serde(default)]
    pub truth_column: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    File,
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Precomputed embeddings for `file`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Sidecar base URL for `http`.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Required for `mock`; checked against the source for the others.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn yes() -> bool {
    true
}
fn default_batch() -> usize {
    256
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout() -> u64 {
    300
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    #[serde(default = "default_metric")]
    pub metric: DistanceMetric,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Sweep grid; defaults to `[epsilon]`.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub block_columns: Vec<String>,
    #[serde(default)]
    pub precision: Precision,
}

fn default_metric() -> DistanceMetric {
    DistanceMetric::Cosine
}
fn default_epsilon() -> f64 {
    0.245
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            metric: default_metric(),
            epsilon: default_epsilon(),
            epsilons: Vec::new(),
            block_columns: Vec::new(),
            precision: Precision::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTarget {
    #[default]
    Cluster,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub method: EvalTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    #[default]
    Pca,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VizConfig {
    #[serde(default)]
    pub projection: ProjectionKind,
    #[serde(default = "default_neighbors")]
    pub n_neighbors: usize,
    /// Sidecar base URL; falls back to `provider.endpoint`.
    #[serde(default)]
    pub endpoint: Option<String>,
}

fn default_neighbors() -> usize {
    15
}

impl Default for VizConfig {
    fn default() -> Self {
        VizConfig {
            projection: ProjectionKind::default(),
            n_neighbors: default_neighbors(),
            endpoint: None,
        }
    }
}

impl RunConfig {
    /// Parses a TOML config, applies `key.path=value` overrides, and resolves
    /// relative paths against `base_dir`.
    pub fn from_toml_str(
        text: &str,
        overrides: &[String],
        base_dir: Option<&Path>,
    ) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let mut cfg: RunConfig = from_table(doc)?;
        if let Some(base) = base_dir {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        Self::from_toml_str(&text, overrides, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        fix(&mut self.output_dir);
        if let Some(p) = self.provider.path.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.provider;
        match p.kind {
            ProviderKind::Mock => match p.dim {
                Some(d) if d >= 2 => {}
                _ => {
                    return Err(Error::config(
                        "provider.dim must be >= 2 for the mock provider",
                    ))
                }
            },
            ProviderKind::File if p.path.is_none() => {
                return Err(Error::config(
                    "provider.path is required for the file provider",
                ))
            }
            ProviderKind::Http if p.endpoint.is_none() => {
                return Err(Error::config(
                    "provider.endpoint is required for the http provider",
                ))
            }
            _ => {}
        }
        if p.batch_size == 0 || p.max_in_flight == 0 {
            return Err(Error::config(
                "provider.batch_size and provider.max_in_flight must be positive",
            ));
        }
        if p.dim == Some(0) {
            return Err(Error::config("provider.dim must be positive"));
        }
        let c = &self.cluster;
        if c.epsilon.is_nan() || c.epsilon < 0.0 {
            return Err(Error::config(format!(
                "cluster.epsilon must be >= 0, got {}",
                c.epsilon
            )));
        }
        if c.epsilons.iter().any(|e| e.is_nan() || *e < 0.0) {
            return Err(Error::config("cluster.epsilons must all be >= 0"));
        }
        if c.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "cluster.epsilons must be strictly increasing",
            ));
        }
        if !(0.0..=1.0).contains(&self.baseline.similarity_threshold) {
            return Err(Error::config(
                "baseline.similarity_threshold must be in [0, 1]",
            ));
        }
        if self.sentence.columns.is_empty() {
            return Err(Error::config("sentence.columns must not be empty"));
        }
        if self.viz.projection == ProjectionKind::External
            && self.viz.endpoint.is_none()
            && self.provider.endpoint.is_none()
        {
            return Err(Error::config(
                "viz.endpoint (or provider.endpoint) is required for external projection",
            ));
        }
        Ok(())
    }

    pub fn sweep_epsilons(&self) -> Vec<f64> {
        if self.cluster.epsilons.is_empty() {
            vec![self.cluster.epsilon]
        } else {
            self.cluster.epsilons.clone()
        }
    }

    fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            metric: self.cluster.metric,
            epsilon: self.cluster.epsilon,
            block_columns: self.cluster.block_columns.clone(),
            sentence_spec: Some(self.sentence.clone()),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

fn from_table<T: DeserializeOwned>(doc: toml::Table) -> Result<T> {
    T::deserialize(toml::Value::Table(doc)).map_err(|e| Error::config(e.to_string()))
}

/// Sets a dotted key in the document. The value is read as a TOML literal
/// when it parses as one, otherwise as a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    let value = parse_literal(raw.trim());
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::config(format!("override '{assignment}' has an empty key")))?;
    let mut table = doc;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override '{key}': '{part}' is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sizes the global worker pool. Has no effect after the pool is built.
pub fn init_workers(workers: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global();
}

/// Writes `path` by filling a temp file in the same directory and renaming.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    fill(tmp.path())?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_text_atomic(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |tmp| {
        std::fs::write(tmp, text).map_err(|e| Error::io(tmp, e))
    })
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_text_atomic(path, &s)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// What a stage did, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config: RunConfig,
    pub dataset: Fingerprint,
    pub provider_tag: Option<String>,
    pub outputs: Vec<String>,
    pub started_unix_secs: u64,
    pub wall_time_secs: f64,
}

pub fn manifest_path(cfg: &RunConfig, stage: &str) -> PathBuf {
    cfg.out(&format!("{stage}.manifest.json"))
}

struct Stage<'a> {
    name: &'static str,
    cfg: &'a RunConfig,
    started: SystemTime,
    clock: Instant,
}

impl<'a> Stage<'a> {
    fn begin(name: &'static str, cfg: &'a RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        Ok(Stage {
            name,
            cfg,
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    fn finish(
        self,
        dataset: &Dataset,
        provider_tag: Option<String>,
        outputs: &[&str],
    ) -> Result<Manifest> {
        let manifest = Manifest {
            stage: self.name.to_string(),
            config: self.cfg.clone(),
            dataset: dataset.fingerprint(),
            provider_tag,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            started_unix_secs: self
                .started
                .duration_since(UNIX_EPOCH)
                .unwrap_or(Duration::ZERO)
                .as_secs(),
            wall_time_secs: self.clock.elapsed().as_secs_f64(),
        };
        write_json_atomic(&manifest_path(self.cfg, self.name), &manifest)?;
        Ok(manifest)
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let ds = load_csv(&d.path, d.id_column.as_deref(), d.truth_column.as_deref())?;
    cfg.sentence.validate(ds.schema())?;
    for c in &cfg.cluster.block_columns {
        if !ds.schema().contains(c) {
            return Err(Error::config(format!(
                "cluster.block_columns: '{c}' not in dataset schema"
            )));
        }
    }
    Ok(ds)
}

pub fn build_provider(cfg: &RunConfig) -> Result<Box<dyn EmbeddingProvider>> {
    let p = &cfg.provider;
    let provider: Box<dyn EmbeddingProvider> = match p.kind {
        ProviderKind::Mock => Box::new(MockProvider {
            dim: p.dim.unwrap_or_default(),
            seed: cfg.seed,
        }),
        ProviderKind::File => {
            let path = p.path.as_ref().expect("validated");
            let fp = FileProvider::open(path).map_err(|e| Error::provider(e.to_string()))?;
            Box::new(fp)
        }
        ProviderKind::Http => Box::new(HttpProvider::connect(
            p.endpoint.as_deref().expect("validated"),
            p.dim,
            p.batch_size,
            p.max_in_flight,
            Duration::from_secs(p.timeout_secs),
        )?),
    };
    if let Some(d) = p.dim {
        if provider.dim() != d {
            return Err(Error::provider(format!(
                "provider yields dim {}, config says {d}",
                provider.dim()
            )));
        }
    }
    Ok(provider)
}

/// Loads the embed stage's output and checks it was made from this dataset.
pub fn load_stage_embeddings(cfg: &RunConfig, dataset: &Dataset) -> Result<EmbeddingMatrix<f32>> {
    let path = cfg.out(EMBEDDINGS_FILE);
    if !path.exists() {
        return Err(Error::data(format!(
            "{} not found; run `embed` first",
            path.display()
        )));
    }
    let manifest: Manifest = read_json(&manifest_path(cfg, "embed"))?;
    let current = dataset.fingerprint();
    if manifest.dataset != current {
        return Err(Error::data(format!(
            "{} was built from a different dataset (content {} vs {})",
            path.display(),
            manifest.dataset.content_hash,
            current.content_hash
        )));
    }
    let m = load_embeddings(&path)?;
    m.check_covers(dataset)?;
    Ok(m)
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<Manifest> {
    let stage = Stage::begin("embed", cfg)?;
    let ds = load_dataset(cfg)?;
    let provider = build_provider(cfg)?;
    let matrix = embed_dataset(
        &ds,
        &cfg.sentence,
        provider.as_ref(),
        cfg.provider.normalize,
    )?;
    write_atomic(&cfg.out(EMBEDDINGS_FILE), |p| save_embeddings(&matrix, p))?;
    stage.finish(
        &ds,
        Some(matrix.provider_tag().to_string()),
        &[EMBEDDINGS_FILE],
    )
}

fn cluster_with(
    cfg: &RunConfig,
    ds: &Dataset,
    matrix: &EmbeddingMatrix<f32>,
) -> Result<crate::ClusterAssignment> {
    let params = cfg.cluster_params();
    match cfg.cluster.precision {
        Precision::F32 => cluster(matrix, ds, &params),
        Precision::F64 => cluster(&matrix.cast::<f64>(), ds, &params),
    }
}

fn write_cluster_outputs(
    cfg: &RunConfig,
    ds: &Dataset,
    assignment: &crate::ClusterAssignment,
    assignment_file: &str,
    stats_file: &str,
) -> Result<GroupStats> {
    write_atomic(&cfg.out(assignment_file), |p| {
        write_assignment_csv(assignment, ds.ids(), p)
    })?;
    let stats = group_stats(assignment);
    write_json_atomic(&cfg.out(stats_file), &stats)?;
    Ok(stats)
}

pub fn cmd_cluster(cfg: &RunConfig) -> Result<(Manifest, GroupStats)> {
    let stage = Stage::begin("cluster", cfg)?;
    let ds = load_dataset(cfg)?;
    let matrix = load_stage_embeddings(cfg, &ds)?;
    let assignment = cluster_with(cfg, &ds, &matrix)?;
    let stats = write_cluster_outputs(cfg, &ds, &assignment, ASSIGNMENT_FILE, GROUP_STATS_FILE)?;
    let m = stage.finish(
        &ds,
        Some(matrix.provider_tag().to_string()),
        &[ASSIGNMENT_FILE, GROUP_STATS_FILE],
    )?;
    Ok((m, stats))
}

pub fn cmd_baseline(cfg: &RunConfig) -> Result<(Manifest, GroupStats)> {
    let stage = Stage::begin("baseline", cfg)?;
    let ds = load_dataset(cfg)?;
    let (_, assignment) = run_baseline(&ds, &cfg.baseline)?;
    let stats = write_cluster_outputs(
        cfg,
        &ds,
        &assignment,
        BASELINE_ASSIGNMENT_FILE,
        BASELINE_STATS_FILE,
    )?;
    let m = stage.finish(&ds, None, &[BASELINE_ASSIGNMENT_FILE, BASELINE_STATS_FILE])?;
    Ok((m, stats))
}

fn eval_report(
    cfg: &RunConfig,
    ds: &Dataset,
    assignment: &crate::ClusterAssignment,
    provider_tag: Option<String>,
) -> Result<RunReport> {
    let metrics = pair_metrics(assignment, ds)?;
    let (method, epsilon, params) = match cfg.eval.method {
        EvalTarget::Cluster => (
            PROPOSED_METHOD,
            Some(cfg.cluster.epsilon),
            serde_json::json!({
                "metric": cfg.cluster.metric,
                "epsilon": cfg.cluster.epsilon,
                "block_columns": cfg.cluster.block_columns,
            }),
        ),
        EvalTarget::Baseline => (
            BASELINE_METHOD,
            None,
            serde_json::to_value(&cfg.baseline).expect("serializable"),
        ),
    };
    Ok(RunReport {
        method: method.to_string(),
        params,
        dataset: ds.fingerprint(),
        provider_tag,
        rows: vec![ReportRow {
            method: method.to_string(),
            epsilon,
            metrics,
        }],
    })
}

fn write_report(
    cfg: &RunConfig,
    report: &RunReport,
    json_file: &str,
    table_file: &str,
) -> Result<()> {
    write_text_atomic(&cfg.out(json_file), &report.to_json())?;
    write_text_atomic(&cfg.out(table_file), &render_table(&report.rows))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<(Manifest, RunReport)> {
    let stage = Stage::begin("eval", cfg)?;
    let ds = load_dataset(cfg)?;
    let (file, upstream) = match cfg.eval.method {
        EvalTarget::Cluster => (ASSIGNMENT_FILE, "cluster"),
        EvalTarget::Baseline => (BASELINE_ASSIGNMENT_FILE, "baseline"),
    };
    let path = cfg.out(file);
    if !path.exists() {
        return Err(Error::data(format!(
            "{} not found; run `{upstream}` first",
            path.display()
        )));
    }
    let upstream_manifest: Manifest = read_json(&manifest_path(cfg, upstream))?;
    if upstream_manifest.dataset != ds.fingerprint() {
        return Err(Error::data(format!(
            "{} was built from a different dataset",
            path.display()
        )));
    }
    let assignment = read_assignment_csv(&path)?;
    let report = eval_report(
        cfg,
        &ds,
        &assignment,
        upstream_manifest.provider_tag.clone(),
    )?;
    write_report(cfg, &report, EVAL_JSON_FILE, EVAL_TABLE_FILE)?;
    let m = stage.finish(
        &ds,
        upstream_manifest.provider_tag,
        &[EVAL_JSON_FILE, EVAL_TABLE_FILE],
    )?;
    Ok((m, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    #[serde(flatten)]
    pub report: RunReport,
    pub sweep: SweepResult,
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<(Manifest, SweepResult)> {
    let stage = Stage::begin("sweep", cfg)?;
    let ds = load_dataset(cfg)?;
    let matrix = load_stage_embeddings(cfg, &ds)?;
    let eps = cfg.sweep_epsilons();
    let blocks = &cfg.cluster.block_columns;
    let spec = Some(&cfg.sentence);
    let sweep = match cfg.cluster.precision {
        Precision::F32 => epsilon_sweep(&matrix, &ds, cfg.cluster.metric, &eps, blocks, spec)?,
        Precision::F64 => epsilon_sweep(
            &matrix.cast::<f64>(),
            &ds,
            cfg.cluster.metric,
            &eps,
            blocks,
            spec,
        )?,
    };
    let report = SweepReport {
        report: RunReport {
            method: PROPOSED_METHOD.to_string(),
            params: serde_json::json!({
                "metric": cfg.cluster.metric,
                "epsilons": eps,
                "block_columns": blocks,
            }),
            dataset: ds.fingerprint(),
            provider_tag: Some(matrix.provider_tag().to_string()),
            rows: ReportRow::from_sweep(PROPOSED_METHOD, &sweep),
        },
        sweep: sweep.clone(),
    };
    write_json_atomic(&cfg.out(SWEEP_JSON_FILE), &report)?;
    write_text_atomic(
        &cfg.out(SWEEP_TABLE_FILE),
        &render_table(&report.report.rows),
    )?;
    write_atomic(&cfg.out(SWEEP_CURVE_FILE), |p| {
        export_sweep_curve(&sweep, p)
    })?;
    let m = stage.finish(
        &ds,
        Some(matrix.provider_tag().to_string()),
        &[SWEEP_JSON_FILE, SWEEP_TABLE_FILE, SWEEP_CURVE_FILE],
    )?;
    Ok((m, sweep))
}

pub fn cmd_viz(cfg: &RunConfig) -> Result<Manifest> {
    let stage = Stage::begin("viz", cfg)?;
    let ds = load_dataset(cfg)?;
    let matrix = load_stage_embeddings(cfg, &ds)?;
    let method = match cfg.viz.projection {
        ProjectionKind::Pca => Projection::Pca,
        ProjectionKind::External => Projection::External {
            endpoint: cfg
                .viz
                .endpoint
                .clone()
                .or_else(|| cfg.provider.endpoint.clone())
                .expect("validated"),
            n_neighbors: cfg.viz.n_neighbors,
        },
    };
    let points = project_2d(&matrix, &method)?;
    write_atomic(&cfg.out(PROJECTION_FILE), |p| export_projection(&points, p))?;
    stage.finish(
        &ds,
        Some(matrix.provider_tag().to_string()),
        &[PROJECTION_FILE],
    )
}

/// Embeds, clusters and evaluates in memory, writing the same files the
/// separate stages would.
pub fn run_fused(cfg: &RunConfig) -> Result<RunReport> {
    let stage = Stage::begin("run", cfg)?;
    let ds = load_dataset(cfg)?;
    let provider = build_provider(cfg)?;
    let matrix = embed_dataset(
        &ds,
        &cfg.sentence,
        provider.as_ref(),
        cfg.provider.normalize,
    )?;
    write_atomic(&cfg.out(EMBEDDINGS_FILE), |p| save_embeddings(&matrix, p))?;
    let assignment = cluster_with(cfg, &ds, &matrix)?;
    write_cluster_outputs(cfg, &ds, &assignment, ASSIGNMENT_FILE, GROUP_STATS_FILE)?;
    let mut eval_cfg = cfg.clone();
    eval_cfg.eval.method = EvalTarget::Cluster;
    let report = eval_report(
        &eval_cfg,
        &ds,
        &assignment,
        Some(matrix.provider_tag().to_string()),
    )?;
    write_report(cfg, &report, EVAL_JSON_FILE, EVAL_TABLE_FILE)?;
    stage.finish(
        &ds,
        Some(matrix.provider_tag().to_string()),
        &[
            EMBEDDINGS_FILE,
            ASSIGNMENT_FILE,
            GROUP_STATS_FILE,
            EVAL_JSON_FILE,
            EVAL_TABLE_FILE,
        ],
    )?;
    Ok(report)
}
