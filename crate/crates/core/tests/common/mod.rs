#![allow(dead_code)]

use std::collections::BTreeSet;

use dedup_core::embedding::{embed_dataset, MockProvider};
use dedup_core::metrics::distance;
use dedup_core::{
    ClusterAssignment, Dataset, DistanceMetric, EmbeddingMatrix, MatchSentenceSpec, RecordId,
    Scalar,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PLANTED_DIM: usize = 64;
pub const PLANTED_SEED: u64 = 7;

const PLANTED_BASES: [&str; 4] = [
    "john hartley smith 20 main street london",
    "maria garcia lopez 4 calle mayor madrid",
    "kenji watanabe 3-1 shibuya crossing tokyo",
    "olufemi adeyemi 77 broad street lagos",
];

/// Four planted clusters of five records each. Variants differ from their
/// base by one or two character edits. Truth column `CID`.
pub fn planted_dataset() -> Dataset {
    let mut rows = Vec::new();
    let mut id = 0u64;
    for (c, base) in PLANTED_BASES.iter().enumerate() {
        for v in 0..5 {
            let text = planted_variant(base, v);
            rows.push((
                RecordId::Num(id),
                vec![text, format!("c{c}")],
                Some(format!("c{c}")),
            ));
            id += 1;
        }
    }
    Dataset::from_rows("planted", vec!["text".into(), "CID".into()], rows).unwrap()
}

fn planted_variant(base: &str, v: usize) -> String {
    let mut chars: Vec<char> = base.chars().collect();
    match v {
        0 => {}
        1 => chars[2] = 'x',
        2 => {
            let n = chars.len();
            chars[n - 3] = 'q';
        }
        3 => {
            chars.remove(10);
        }
        _ => {
            chars[5] = 'z';
            chars.push('s');
        }
    }
    chars.into_iter().collect()
}

pub fn planted_spec() -> MatchSentenceSpec {
    MatchSentenceSpec::new(["text"])
}

pub fn planted_matrix(ds: &Dataset) -> EmbeddingMatrix<f32> {
    embed_dataset(
        ds,
        &planted_spec(),
        &MockProvider {
            dim: PLANTED_DIM,
            seed: PLANTED_SEED,
        },
        true,
    )
    .unwrap()
}

/// (largest within-cluster distance, smallest cross-cluster distance).
pub fn planted_margins(ds: &Dataset, m: &EmbeddingMatrix<f32>) -> (f64, f64) {
    let mut intra = 0f64;
    let mut inter = f64::INFINITY;
    for i in 0..ds.len() {
        for j in i + 1..ds.len() {
            let d = distance(DistanceMetric::Cosine, m.row(i), m.row(j)).unwrap() as f64;
            if ds.records()[i].truth_cluster == ds.records()[j].truth_cluster {
                intra = intra.max(d);
            } else {
                inter = inter.min(d);
            }
        }
    }
    (intra, inter)
}

pub fn planted_epsilon(ds: &Dataset, m: &EmbeddingMatrix<f32>) -> f64 {
    let (intra, inter) = planted_margins(ds, m);
    assert!(intra < inter, "fixture has no margin: {intra} vs {inter}");
    (intra + inter) / 2.0
}

pub fn truth_assignment(ds: &Dataset) -> ClusterAssignment {
    let mut by_truth: std::collections::BTreeMap<String, Vec<RecordId>> = Default::default();
    for r in ds.records() {
        by_truth
            .entry(r.truth_cluster.clone().unwrap())
            .or_default()
            .push(r.id.clone());
    }
    ClusterAssignment::from_sets(by_truth.into_values())
}

/// Independent clustering oracle: full distance matrix, explicit block
/// comparison, and its own union-find.
pub fn oracle_cluster<T: Scalar>(
    m: &EmbeddingMatrix<T>,
    ds: &Dataset,
    metric: DistanceMetric,
    eps: f64,
    blocks: &[String],
) -> ClusterAssignment {
    let n = ds.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    let eps_t = T::from(eps).unwrap();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let same_block = blocks
                .iter()
                .all(|b| ds.records()[i].get(b) == ds.records()[j].get(b));
            if !same_block {
                continue;
            }
            if distance(metric, m.row(i), m.row(j)).unwrap() <= eps_t {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut sets: std::collections::BTreeMap<usize, Vec<RecordId>> = Default::default();
    for i in 0..n {
        let r = root(&mut parent, i);
        sets.entry(r).or_default().push(ds.records()[i].id.clone());
    }
    ClusterAssignment::from_sets(sets.into_values())
}

/// Counts pair categories by direct enumeration.
pub fn brute_pair_counts<A: PartialEq, B: PartialEq>(
    pred: &[A],
    truth: &[B],
) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    (tp, fp, tn, fn_)
}

const WORDS: [&str; 16] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima", "mike", "november", "oscar", "papa",
];

/// Random table of `n` records: name, block and truth columns. Records are
/// drawn as noisy copies of a smaller set of entities, so neighborhoods are
/// non-trivial.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, n_blocks: usize) -> Dataset {
    let n_entities = (n / 3).max(1);
    let entities: Vec<String> = (0..n_entities)
        .map(|_| {
            (0..3)
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let rows = (0..n).map(|i| {
        let e = rng.random_range(0..n_entities);
        let mut chars: Vec<char> = entities[e].chars().collect();
        for _ in 0..rng.random_range(0..3) {
            let k = rng.random_range(0..chars.len());
            chars[k] = (b'a' + rng.random_range(0..26u8)) as char;
        }
        let block = format!("b{}", rng.random_range(0..n_blocks.max(1)));
        (
            RecordId::Num(i as u64),
            vec![chars.into_iter().collect(), block, format!("e{e}")],
            Some(format!("e{e}")),
        )
    });
    Dataset::from_rows(
        "random",
        vec!["name".into(), "block".into(), "CID".into()],
        rows,
    )
    .unwrap()
}

pub fn mock_matrix(ds: &Dataset, dim: usize, seed: u64) -> EmbeddingMatrix<f32> {
    embed_dataset(
        ds,
        &MatchSentenceSpec::new(["name"]),
        &MockProvider { dim, seed },
        true,
    )
    .unwrap()
}

/// Same records and vectors in a shuffled order.
pub fn shuffled<T: Scalar>(
    rng: &mut ChaCha8Rng,
    ds: &Dataset,
    m: &EmbeddingMatrix<T>,
) -> (Dataset, EmbeddingMatrix<T>) {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    let ds2 = Dataset::from_rows(
        ds.name.clone(),
        ds.schema().to_vec(),
        order.iter().map(|&i| {
            let r = &ds.records()[i];
            (r.id.clone(), r.values().to_vec(), r.truth_cluster.clone())
        }),
    )
    .unwrap();
    let m2 = EmbeddingMatrix::from_rows(
        order.iter().map(|&i| m.record_ids()[i].clone()).collect(),
        order.iter().map(|&i| m.row(i).to_vec()).collect(),
        m.provider_tag(),
    )
    .unwrap();
    (ds2, m2)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn id_set(xs: impl IntoIterator<Item = u64>) -> BTreeSet<RecordId> {
    xs.into_iter().map(RecordId::Num).collect()
}

pub mod sidecar {
    //! Minimal stand-in for the embedding sidecar, serving the same wire
    //! contract with the 3-gram mock embedder.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    use dedup_core::embedding::mock_embed;
    use serde_json::{json, Value};

    #[derive(Debug, Clone, Default)]
    pub struct Behavior {
        pub dim: usize,
        pub seed: u64,
        /// Dimension reported in `/embed` replies, when different from `dim`.
        pub reply_dim: Option<usize>,
        pub delay: Duration,
    }

    #[derive(Debug, Default)]
    pub struct Stats {
        pub in_flight: AtomicUsize,
        pub max_in_flight: AtomicUsize,
        pub embed_calls: AtomicUsize,
        pub max_batch: AtomicUsize,
    }

    pub struct Sidecar {
        pub url: String,
        pub stats: Arc<Stats>,
    }

    pub fn spawn(behavior: Behavior) -> Sidecar {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let stats = Arc::new(Stats::default());
        let shared = stats.clone();
        std::thread::spawn(move || {
            for conn in listener.incoming().flatten() {
                let b = behavior.clone();
                let s = shared.clone();
                std::thread::spawn(move || {
                    let _ = handle(conn, &b, &s);
                });
            }
        });
        Sidecar { url, stats }
    }

    fn handle(conn: TcpStream, b: &Behavior, stats: &Stats) -> std::io::Result<()> {
        let mut reader = BufReader::new(conn.try_clone()?);
        let mut request_line = String::new();
        reader.read_line(&mut request_line)?;
        let mut content_length = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line)?;
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;
        let mut parts = request_line.split_whitespace();
        let (method, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        let (status, reply) = match (method, path) {
            ("GET", "/health") => (200, json!({"model": "stub-3gram", "dim": b.dim})),
            ("POST", "/embed") => {
                let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
                stats.embed_calls.fetch_add(1, Ordering::SeqCst);
                std::thread::sleep(b.delay);
                let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                let out = match req["sentences"].as_array() {
                    Some(sentences) => {
                        stats.max_batch.fetch_max(sentences.len(), Ordering::SeqCst);
                        let vectors: Vec<Vec<f32>> = sentences
                            .iter()
                            .map(|s| mock_embed(s.as_str().unwrap_or(""), b.dim, b.seed))
                            .collect();
                        (
                            200,
                            json!({"dim": b.reply_dim.unwrap_or(b.dim), "vectors": vectors}),
                        )
                    }
                    None => (400, json!({"error": "sentences missing"})),
                };
                stats.in_flight.fetch_sub(1, Ordering::SeqCst);
                out
            }
            ("POST", "/project") => {
                let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                match req["vectors"].as_array() {
                    Some(vs) => {
                        let points: Vec<[f64; 2]> = vs
                            .iter()
                            .map(|v| [v[0].as_f64().unwrap_or(0.0), v[1].as_f64().unwrap_or(0.0)])
                            .collect();
                        (200, json!({ "points": points }))
                    }
                    None => (400, json!({"error": "vectors missing"})),
                }
            }
            _ => (404, json!({"error": "not found"})),
        };
        let text = reply.to_string();
        let mut conn = conn;
        write!(
            conn,
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
            text.len()
        )?;
        conn.flush()
    }
}

/// Writes the planted dataset to `dir/planted.csv` and returns a mock-provider
/// config that reproduces `planted_matrix` and clusters at `planted_epsilon`.
pub fn planted_config(dir: &std::path::Path) -> dedup_core::pipeline::RunConfig {
    let ds = planted_dataset();
    dedup_core::records::write_csv(&ds, dir.join("planted.csv")).unwrap();
    let eps = planted_epsilon(&ds, &planted_matrix(&ds));
    let text = format!(
        r#"
output_dir = "out"
seed = {PLANTED_SEED}
[dataset]
path = "planted.csv"
truth_column = "CID"
[sentence]
columns = ["text"]
[provider]
kind = "mock"
dim = {PLANTED_DIM}
batch_size = 6
[cluster]
epsilon = {eps:?}
"#
    );
    std::fs::write(dir.join("dedup.toml"), &text).unwrap();
    dedup_core::pipeline::RunConfig::load(dir.join("dedup.toml"), &[]).unwrap()
}

/// Loads a Musicbrainz-style CSV (truth column `CID`) and matching EMB1
/// vectors, samples whole clusters down to 20K records, and sweeps cosine
/// epsilon without blocking. Returns (records, F per epsilon, time spent
/// after loading).
pub fn musicbrainz_sweep(
    csv: &std::path::Path,
    emb: &std::path::Path,
    id_column: &str,
    grid: &[f64],
) -> dedup_core::Result<(usize, Vec<f64>, std::time::Duration)> {
    use dedup_core::embedding::FileProvider;
    let full = dedup_core::records::load_csv(csv, Some(id_column), Some("CID"))?;
    let provider = FileProvider::open(emb)?;
    let started = std::time::Instant::now();
    let ds = if full.len() > 20_000 {
        full.sample_truth_clusters(20_000, 7)
    } else {
        full
    };
    let spec = MatchSentenceSpec::musicbrainz();
    let m = embed_dataset(&ds, &spec, &provider, true)?;
    let sweep = dedup_core::evaluation::epsilon_sweep(
        &m,
        &ds,
        DistanceMetric::Cosine,
        grid,
        &[],
        Some(&spec),
    )?;
    let f = sweep.rows.iter().map(|r| r.metrics.f_score).collect();
    Ok((ds.len(), f, started.elapsed()))
}
