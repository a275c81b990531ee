//! Embedding vectors, providers that produce them, and the on-disk format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "EMB1" | dim: u32 | count: u64 | tag_len: u32 | tag: utf8
//! count x ( id_len: u32 | id: utf8 | dim x f32 )
//! ```

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{match_sentences, Dataset, MatchSentenceSpec, RecordId};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"EMB1";

/// Row-major matrix of embedding vectors, one row per record.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    record_ids: Vec<RecordId>,
    data: Vec<T>,
    dim: usize,
    provider_tag: String,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn from_flat(
        record_ids: Vec<RecordId>,
        data: Vec<T>,
        dim: usize,
        provider_tag: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::data("embedding dimension must be positive"));
        }
        if data.len() != record_ids.len() * dim {
            return Err(Error::data(format!(
                "{} values for {} records of dim {dim}",
                data.len(),
                record_ids.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "record {}: non-finite embedding value",
                record_ids[pos / dim]
            )));
        }
        let mut seen = HashSet::with_capacity(record_ids.len());
        for id in &record_ids {
            if !seen.insert(id) {
                return Err(Error::data(format!(
                    "duplicate record id {id} in embeddings"
                )));
            }
        }
        Ok(EmbeddingMatrix {
            record_ids,
            data,
            dim,
            provider_tag: provider_tag.into(),
        })
    }

    pub fn from_rows(
        record_ids: Vec<RecordId>,
        rows: Vec<Vec<T>>,
        provider_tag: impl Into<String>,
    ) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::data(format!(
                "row {bad} has length {}, expected {dim}",
                rows[bad].len()
            )));
        }
        Self::from_flat(record_ids, rows.concat(), dim, provider_tag)
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn record_ids(&self) -> &[RecordId] {
        &self.record_ids
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            record_ids: self.record_ids.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from(*v).unwrap_or_else(U::nan))
                .collect(),
            dim: self.dim,
            provider_tag: self.provider_tag.clone(),
        }
    }

    /// Checks that the matrix holds exactly the dataset's ids, in dataset order.
    pub fn check_covers(&self, dataset: &Dataset) -> Result<()> {
        if self.len() != dataset.len() {
            return Err(Error::data(format!(
                "embeddings hold {} records, dataset has {}",
                self.len(),
                dataset.len()
            )));
        }
        for (i, (a, b)) in self.record_ids.iter().zip(dataset.ids()).enumerate() {
            if a != b {
                return Err(Error::data(format!(
                    "embedding row {i} is record {a}, dataset row is {b}"
                )));
            }
        }
        Ok(())
    }
}

pub fn l2_normalize<T: Scalar>(v: &mut [T]) {
    let norm = v.iter().fold(T::zero(), |acc, x| acc + *x * *x).sqrt();
    if norm > T::zero() {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
}

// FNV-1a, 64 bit.
pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Deterministic stand-in embedder: counts of seeded-hashed character
/// 3-grams, L2-normalized. Inputs shorter than three characters map to the
/// first basis vector.
pub fn mock_embed(sentence: &str, dim: usize, seed: u64) -> Vec<f32> {
    assert!(dim >= 2, "mock embedding dim must be at least 2");
    let seeded = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    let chars: Vec<char> = sentence.chars().collect();
    let mut v = vec![0f32; dim];
    if chars.len() < 3 {
        v[0] = 1.0;
        return v;
    }
    let mut buf = [0u8; 12];
    for gram in chars.windows(3) {
        let mut len = 0;
        for c in gram {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a(seeded, &buf[..len]);
        v[(h % dim as u64) as usize] += 1.0;
    }
    l2_normalize(&mut v);
    v
}

/// A sentence to embed together with the record it came from.
#[derive(Debug, Clone, Copy)]
pub struct SentenceRef<'a> {
    pub id: &'a RecordId,
    pub text: &'a str,
}

/// Anything that turns a batch of match sentences into vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn tag(&self) -> String;

    fn dim(&self) -> usize;

    fn batch_size(&self) -> usize {
        256
    }

    /// Upper bound on concurrently outstanding batches.
    fn max_in_flight(&self) -> usize {
        1
    }

    fn embed_batch(&self, batch: &[SentenceRef<'_>]) -> Result<Vec<Vec<f32>>>;
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    pub dim: usize,
    pub seed: u64,
}

impl EmbeddingProvider for MockProvider {
    fn tag(&self) -> String {
        format!("mock:3gram;dim={};seed={}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, batch: &[SentenceRef<'_>]) -> Result<Vec<Vec<f32>>> {
        Ok(batch
            .iter()
            .map(|s| mock_embed(s.text, self.dim, self.seed))
            .collect())
    }
}

/// Serves precomputed vectors looked up by record id.
#[derive(Debug)]
pub struct FileProvider {
    source_tag: String,
    dim: usize,
    vectors: HashMap<RecordId, Vec<f32>>,
}

impl FileProvider {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_matrix(load_embeddings(path)?))
    }

    pub fn from_matrix(matrix: EmbeddingMatrix<f32>) -> Self {
        let vectors = matrix
            .record_ids()
            .iter()
            .cloned()
            .zip(matrix.rows().map(<[f32]>::to_vec))
            .collect();
        FileProvider {
            source_tag: matrix.provider_tag().to_string(),
            dim: matrix.dim(),
            vectors,
        }
    }
}

impl EmbeddingProvider for FileProvider {
    fn tag(&self) -> String {
        format!("file:{}", self.source_tag)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn batch_size(&self) -> usize {
        4096
    }

    fn embed_batch(&self, batch: &[SentenceRef<'_>]) -> Result<Vec<Vec<f32>>> {
        batch
            .iter()
            .map(|s| {
                self.vectors.get(s.id).cloned().ok_or_else(|| {
                    Error::provider(format!("no precomputed vector for record {}", s.id))
                })
            })
            .collect()
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    sentences: Vec<&'a str>,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct HealthResponse {
    pub model: String,
    pub dim: usize,
}

/// Client for the embedding sidecar (`POST /embed`, `GET /health`).
pub struct HttpProvider {
    base_url: String,
    model: String,
    dim: usize,
    batch_size: usize,
    max_in_flight: usize,
    agent: ureq::Agent,
}

impl HttpProvider {
    /// Connects to the sidecar and checks that its advertised dimension
    /// matches `expected_dim` when one is given.
    pub fn connect(
        base_url: &str,
        expected_dim: Option<usize>,
        batch_size: usize,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Result<Self> {
        if batch_size == 0 || max_in_flight == 0 {
            return Err(Error::config(
                "batch size and in-flight limit must be positive",
            ));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let base_url = base_url.trim_end_matches('/').to_string();
        let health = fetch_health(&agent, &base_url)?;
        if let Some(d) = expected_dim {
            if d != health.dim {
                return Err(Error::provider(format!(
                    "sidecar model {} has dim {}, config expects {d}",
                    health.model, health.dim
                )));
            }
        }
        Ok(HttpProvider {
            base_url,
            model: health.model,
            dim: health.dim,
            batch_size,
            max_in_flight,
            agent,
        })
    }
}

fn fetch_health(agent: &ureq::Agent, base_url: &str) -> Result<HealthResponse> {
    let url = format!("{base_url}/health");
    agent
        .get(&url)
        .call()
        .and_then(|mut r| r.body_mut().read_json::<HealthResponse>())
        .map_err(|e| Error::provider(format!("GET {url}: {e}")))
}

impl EmbeddingProvider for HttpProvider {
    fn tag(&self) -> String {
        format!("http:{};dim={}", self.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn embed_batch(&self, batch: &[SentenceRef<'_>]) -> Result<Vec<Vec<f32>>> {
        let url = format!("{}/embed", self.base_url);
        let body = EmbedRequest {
            sentences: batch.iter().map(|s| s.text).collect(),
        };
        let resp: EmbedResponse = self
            .agent
            .post(&url)
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| Error::provider(format!("POST {url}: {e}")))?;
        if resp.dim != self.dim {
            return Err(Error::provider(format!(
                "sidecar answered dim {}, expected {}",
                resp.dim, self.dim
            )));
        }
        Ok(resp.vectors)
    }
}

/// Embeds every record's match sentence. Output rows follow dataset order
/// no matter how batches are scheduled.
pub fn embed_dataset(
    dataset: &Dataset,
    spec: &MatchSentenceSpec,
    provider: &dyn EmbeddingProvider,
    normalize: bool,
) -> Result<EmbeddingMatrix<f32>> {
    let sentences = match_sentences(dataset, spec)?;
    let refs: Vec<SentenceRef<'_>> = dataset
        .ids()
        .zip(&sentences)
        .map(|(id, text)| SentenceRef { id, text })
        .collect();
    let dim = provider.dim();
    let batches: Vec<&[SentenceRef<'_>]> = refs.chunks(provider.batch_size().max(1)).collect();
    type Slot = Mutex<Option<Result<Vec<Vec<f32>>>>>;
    let results: Vec<Slot> = batches.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = provider.max_in_flight().clamp(1, batches.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let b = next.fetch_add(1, Ordering::Relaxed);
                let Some(batch) = batches.get(b) else { break };
                let out = provider.embed_batch(batch);
                let failed = out.is_err();
                *results[b].lock().unwrap() = Some(out);
                if failed {
                    next.store(batches.len(), Ordering::Relaxed);
                    break;
                }
            });
        }
    });

    let mut data = Vec::with_capacity(refs.len() * dim);
    for (b, (slot, batch)) in results.into_iter().zip(&batches).enumerate() {
        let first = batch.first().map(|s| s.id.to_string()).unwrap_or_default();
        let context =
            |msg: String| Error::provider(format!("batch {b} (from record {first}): {msg}"));
        let vectors = match slot.into_inner().unwrap() {
            Some(Ok(v)) => v,
            Some(Err(e)) => return Err(context(e.to_string())),
            None => return Err(context("not processed".into())),
        };
        if vectors.len() != batch.len() {
            return Err(context(format!(
                "{} vectors for {} sentences",
                vectors.len(),
                batch.len()
            )));
        }
        for (mut v, s) in vectors.into_iter().zip(batch.iter()) {
            if v.len() != dim {
                return Err(context(format!(
                    "record {}: vector of length {}, expected {dim}",
                    s.id,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(context(format!("record {}: non-finite vector", s.id)));
            }
            if normalize {
                l2_normalize(&mut v);
            }
            data.extend_from_slice(&v);
        }
    }
    let tag = format!("{};normalize={normalize}", provider.tag());
    EmbeddingMatrix::from_flat(dataset.ids().cloned().collect(), data, dim, tag)
}

/// Writes the matrix in the `EMB1` layout.
pub fn save_embeddings(matrix: &EmbeddingMatrix<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_embeddings(matrix, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_embeddings<W: Write>(matrix: &EmbeddingMatrix<f32>, w: &mut W) -> std::io::Result<()> {
    let dim = u32::try_from(matrix.dim()).map_err(std::io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(matrix.len() as u64).to_le_bytes())?;
    write_str(w, matrix.provider_tag())?;
    for (id, row) in matrix.record_ids().iter().zip(matrix.rows()) {
        write_str(w, &id.to_string())?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    let len = u32::try_from(s.len()).map_err(std::io::Error::other)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(&mut BufReader::new(file))
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn read_embeddings<R: Read>(r: &mut R) -> Result<EmbeddingMatrix<f32>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "header")?;
    if &magic != MAGIC {
        return Err(Error::data(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            "EMB1"
        )));
    }
    let dim = read_u32(r, "dim")? as usize;
    if dim == 0 {
        return Err(Error::data("declared dim is 0"));
    }
    let count = read_u64(r, "count")?;
    let tag = read_string(r, "provider tag")?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut row = vec![0u8; dim * 4];
    for i in 0..count {
        let id = read_string(r, &format!("id of record {i}"))?;
        read_exact(r, &mut row, &format!("vector of record {i} (dim {dim})"))?;
        data.extend(
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
        ids.push(RecordId::parse(&id));
    }
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::data(format!(
                "trailing bytes after {count} records of dim {dim}"
            )))
        }
        Err(e) => return Err(Error::data(format!("read error: {e}"))),
    }
    EmbeddingMatrix::from_flat(ids, data, dim, tag)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::data(format!("truncated file while reading {what}"))
        }
        _ => Error::data(format!("reading {what}: {e}")),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

// Ids and tags are short; anything longer is a corrupt length prefix.
const MAX_STRING: usize = 1 << 20;

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    if len > MAX_STRING {
        return Err(Error::data(format!("{what}: implausible length {len}")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, what)?;
    String::from_utf8(buf).map_err(|_| Error::data(format!("{what}: invalid UTF-8")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{distance, DistanceMetric};
    use proptest::prelude::*;

    fn cos(a: &[f32], b: &[f32]) -> f32 {
        distance(DistanceMetric::Cosine, a, b).unwrap()
    }

    fn small_dataset(n: usize) -> Dataset {
        Dataset::from_rows(
            "t",
            vec!["name".into(), "city".into()],
            (0..n).map(|i| {
                (
                    RecordId::Num(i as u64),
                    vec![format!("person {}", i % 7), format!("city {}", i % 3)],
                    None,
                )
            }),
        )
        .unwrap()
    }

    #[test]
    fn mock_is_deterministic() {
        assert_eq!(mock_embed("abc", 16, 7), mock_embed("abc", 16, 7));
        assert_ne!(mock_embed("abcdef", 16, 7), mock_embed("abcdef", 16, 8));
    }

    #[test]
    fn mock_short_inputs() {
        let mut e1 = vec![0f32; 8];
        e1[0] = 1.0;
        assert_eq!(mock_embed("", 8, 1), e1);
        assert_eq!(mock_embed("ab", 8, 1), e1);
    }

    #[test]
    fn mock_is_unit_norm() {
        let v = mock_embed("john smith london", 64, 7);
        let n: f32 = v.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mock_similarity_ordering() {
        let v1 = mock_embed("john smith london", 64, 7);
        let v2 = mock_embed("john smyth london", 64, 7);
        let v3 = mock_embed("completely different text", 64, 7);
        let near = cos(&v1, &v2);
        let far = cos(&v1, &v3);
        assert!(near < far);
        // Frozen from an independent Python implementation of the same hashing.
        assert!((near - 0.165_377_67).abs() < 1e-5, "{near}");
        assert!((far - 0.840_255_4).abs() < 1e-5, "{far}");
    }

    #[test]
    fn mock_permutation_sensitive() {
        assert_ne!(mock_embed("a b", 32, 7), mock_embed("b a", 32, 7));
    }

    #[test]
    fn embed_shape() {
        let ds = small_dataset(200);
        let spec = MatchSentenceSpec::new(["name", "city"]);
        let m = embed_dataset(&ds, &spec, &MockProvider { dim: 32, seed: 3 }, true).unwrap();
        assert_eq!(m.len(), 200);
        assert_eq!(m.dim(), 32);
        assert!(m.provider_tag().starts_with("mock:"));
        m.check_covers(&ds).unwrap();
        // records 0 and 21 share both name and city
        assert_eq!(m.row(0), m.row(21));
    }

    struct Chunky {
        inner: MockProvider,
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for Chunky {
        fn tag(&self) -> String {
            "chunky".into()
        }
        fn dim(&self) -> usize {
            self.inner.dim
        }
        fn batch_size(&self) -> usize {
            7
        }
        fn max_in_flight(&self) -> usize {
            4
        }
        fn embed_batch(&self, batch: &[SentenceRef<'_>]) -> Result<Vec<Vec<f32>>> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.inner.embed_batch(batch)
        }
    }

    #[test]
    fn batching_preserves_order() {
        let ds = small_dataset(100);
        let spec = MatchSentenceSpec::new(["name", "city"]);
        let serial = embed_dataset(&ds, &spec, &MockProvider { dim: 16, seed: 1 }, true).unwrap();
        let chunky = Chunky {
            inner: MockProvider { dim: 16, seed: 1 },
            calls: AtomicUsize::new(0),
        };
        let batched = embed_dataset(&ds, &spec, &chunky, true).unwrap();
        assert_eq!(serial.as_flat(), batched.as_flat());
        assert_eq!(chunky.calls.load(Ordering::Relaxed), 15);
    }

    struct Broken(usize);

    impl EmbeddingProvider for Broken {
        fn tag(&self) -> String {
            "broken".into()
        }
        fn dim(&self) -> usize {
            4
        }
        fn batch_size(&self) -> usize {
            10
        }
        fn embed_batch(&self, batch: &[SentenceRef<'_>]) -> Result<Vec<Vec<f32>>> {
            Ok(batch
                .iter()
                .map(|s| {
                    if s.id == &RecordId::Num(self.0 as u64) {
                        vec![f32::NAN; 4]
                    } else {
                        vec![1.0; 3]
                    }
                })
                .collect())
        }
    }

    #[test]
    fn provider_failures_name_batch() {
        let ds = small_dataset(30);
        let spec = MatchSentenceSpec::new(["name"]);
        let err = embed_dataset(&ds, &spec, &Broken(99), true).unwrap_err();
        assert!(matches!(err, Error::Provider(_)));
        assert!(err.to_string().contains("batch 0"), "{err}");

        struct Nan;
        impl EmbeddingProvider for Nan {
            fn tag(&self) -> String {
                "nan".into()
            }
            fn dim(&self) -> usize {
                2
            }
            fn batch_size(&self) -> usize {
                10
            }
            fn embed_batch(&self, batch: &[SentenceRef<'_>]) -> Result<Vec<Vec<f32>>> {
                Ok(batch
                    .iter()
                    .map(|s| {
                        if s.id == &RecordId::Num(14) {
                            vec![f32::NAN, 0.0]
                        } else {
                            vec![1.0, 0.0]
                        }
                    })
                    .collect())
            }
        }
        let err = embed_dataset(&ds, &spec, &Nan, true).unwrap_err();
        assert!(err.to_string().contains("batch 1"), "{err}");
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn file_provider_serves_by_id() {
        let ds = small_dataset(12);
        let spec = MatchSentenceSpec::new(["name", "city"]);
        let m = embed_dataset(&ds, &spec, &MockProvider { dim: 8, seed: 5 }, true).unwrap();
        let fp = FileProvider::from_matrix(m.clone());
        let again = embed_dataset(&ds, &spec, &fp, true).unwrap();
        assert_eq!(again.as_flat(), m.as_flat());
        assert!(again.provider_tag().starts_with("file:mock:"));

        let bigger = small_dataset(13);
        assert!(matches!(
            embed_dataset(&bigger, &spec, &fp, true),
            Err(Error::Provider(_))
        ));
    }

    fn encoded(m: &EmbeddingMatrix<f32>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_embeddings(m, &mut buf).unwrap();
        buf
    }

    #[test]
    fn layout_is_fixed() {
        let m = EmbeddingMatrix::from_rows(vec![RecordId::Num(7)], vec![vec![1.0f32, -2.5]], "t")
            .unwrap();
        let bytes = encoded(&m);
        let mut expected = b"EMB1".to_vec();
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(b"t");
        expected.extend(1u32.to_le_bytes());
        expected.extend(b"7");
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn short_row_is_rejected() {
        let rows = vec![vec![0.5f32; 768]; 2];
        let m = EmbeddingMatrix::from_rows(vec![RecordId::Num(0), RecordId::Num(1)], rows, "x")
            .unwrap();
        let mut bytes = encoded(&m);
        bytes.truncate(bytes.len() - 4);
        assert!(read_embeddings(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn bad_headers() {
        let m =
            EmbeddingMatrix::from_rows(vec![RecordId::Num(0)], vec![vec![1.0f32; 3]], "x").unwrap();
        let mut bytes = encoded(&m);
        bytes[3] = b'2';
        let err = read_embeddings(&mut bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("magic"));

        let mut bytes = encoded(&m);
        bytes.push(0);
        assert!(read_embeddings(&mut bytes.as_slice()).is_err());

        assert!(read_embeddings(&mut &b"EMB"[..]).is_err());
    }

    #[test]
    fn empty_matrix_round_trips() {
        let m = EmbeddingMatrix::<f32>::from_flat(vec![], vec![], 768, "none").unwrap();
        let back = read_embeddings(&mut encoded(&m).as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(back.is_empty());
        assert_eq!(back.dim(), 768);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.emb");
        let m = EmbeddingMatrix::from_rows(
            vec![RecordId::Num(3), RecordId::Text("b-9".into())],
            vec![vec![0.1f32, f32::MIN_POSITIVE], vec![-0.0, 1e30]],
            "tag ü",
        )
        .unwrap();
        save_embeddings(&m, &p).unwrap();
        let back = load_embeddings(&p).unwrap();
        assert_eq!(back.record_ids(), m.record_ids());
        assert_eq!(back.provider_tag(), "tag ü");
        let bits =
            |x: &EmbeddingMatrix<f32>| x.as_flat().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(
            dim in 1usize..12,
            n in 0usize..10,
            bits in prop::collection::vec(any::<u32>(), 0..120),
            tag in ".{0,12}",
        ) {
            let data: Vec<f32> = (0..n * dim)
                .map(|i| f32::from_bits(bits.get(i).copied().unwrap_or(i as u32)))
                .map(|f| if f.is_finite() { f } else { 0.25 })
                .collect();
            let ids = (0..n).map(|i| RecordId::Text(format!("r{i}"))).collect();
            let m = EmbeddingMatrix::from_flat(ids, data, dim, tag).unwrap();
            let back = read_embeddings(&mut encoded(&m).as_slice()).unwrap();
            prop_assert_eq!(back.record_ids(), m.record_ids());
            prop_assert_eq!(back.provider_tag(), m.provider_tag());
            let a: Vec<u32> = back.as_flat().iter().map(|f| f.to_bits()).collect();
            let b: Vec<u32> = m.as_flat().iter().map(|f| f.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
