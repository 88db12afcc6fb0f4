//! Demo database of (task, plan, script) instances and exhaustive cosine
//! top-K retrieval over task embeddings.

use crate::flow_script::parse_script;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_DIMENSION: usize = 256;

/// Seed for the token-bucket hash of [`HashingEmbedder`].
pub const EMBED_HASH_SEED: u64 = 0x5e_ed0f_7a5c;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoInstance {
    pub id: String,
    pub task: String,
    pub plan: Vec<String>,
    pub script: String,
    pub platform: String,
}

impl DemoInstance {
    pub fn validate(&self) -> Result<(), StoreError> {
        let invalid = |why: String| StoreError::InvalidDemo {
            id: self.id.clone(),
            reason: why,
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.task.trim().is_empty() {
            return Err(invalid("empty task".into()));
        }
        if self.plan.is_empty() || self.plan.iter().any(|s| s.trim().is_empty()) {
            return Err(invalid("plan must be a non-empty list of non-empty steps".into()));
        }
        parse_script(&self.script).map_err(|e| invalid(format!("script does not parse: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("text is empty")]
    EmptyText,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("demo `{id}` is invalid: {reason}")]
    InvalidDemo { id: String, reason: String },
    #[error("demo id `{0}` already exists")]
    DuplicateId(String),
    #[error("demo database line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("embedding service error: {0}")]
    Embedder(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Finite vector that is either all zeros or L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values`; non-finite entries are rejected.
    pub fn normalized(values: Vec<f64>) -> Option<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Some(Self(values));
        }
        Some(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, StoreError>;
}

/// Bag-of-tokens feature hashing: lowercase, split on non-alphanumerics,
/// bucket each token with a seeded SHA-256, count, L2-normalize.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, StoreError> {
        embed_text(text, self.dimension)
    }
}

pub fn embed_text(text: &str, dimension: usize) -> Result<EmbeddingVector, StoreError> {
    if text.trim().is_empty() {
        return Err(StoreError::EmptyText);
    }
    let mut counts = vec![0.0; dimension];
    let lower = text.to_lowercase();
    for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let digest = Sha256::new()
            .chain_update(EMBED_HASH_SEED.to_le_bytes())
            .chain_update(token.as_bytes())
            .finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        counts[(u64::from_le_bytes(word) % dimension as u64) as usize] += 1.0;
    }
    Ok(EmbeddingVector::normalized(counts).expect("counts are finite"))
}

/// Embedder backed by an HTTP service.
///
/// Request `{"input": str, "dimension": int}`, response `{"embedding": [float]}`.
/// The returned vector is re-normalized.
pub struct HttpEmbedder {
    endpoint: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize, timeout: std::time::Duration) -> Result<Self, StoreError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| StoreError::Embedder(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            dimension,
            client,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, StoreError> {
        if text.trim().is_empty() {
            return Err(StoreError::EmptyText);
        }
        #[derive(Deserialize)]
        struct Reply {
            embedding: Vec<f64>,
        }
        let reply: Reply = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "input": text, "dimension": self.dimension }))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| StoreError::Embedder(e.to_string()))?
            .json()
            .map_err(|e| StoreError::Embedder(e.to_string()))?;
        if reply.embedding.len() != self.dimension {
            return Err(StoreError::DimensionMismatch(reply.embedding.len(), self.dimension));
        }
        EmbeddingVector::normalized(reply.embedding)
            .ok_or_else(|| StoreError::Embedder("non-finite embedding".into()))
    }
}

/// Cosine similarity; 0 when either vector is zero.
///
/// Both vectors are already unit length, so this is the plain dot product.
/// Dividing by recomputed norms again would only add rounding noise that can
/// split mathematically equal scores and reorder ties.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, StoreError> {
    if u.dimension() != v.dimension() {
        return Err(StoreError::DimensionMismatch(u.dimension(), v.dimension()));
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    entries: Vec<(String, EmbeddingVector)>,
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<(), StoreError> {
        if vector.dimension() != self.dimension {
            return Err(StoreError::DimensionMismatch(vector.dimension(), self.dimension));
        }
        self.entries.push((id.into(), vector));
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Exhaustive scan; sorted by score descending, ties by ascending id.
pub fn retrieve_top_k(index: &VectorIndex, query: &EmbeddingVector, k: usize) -> Result<Vec<(String, f64)>, StoreError> {
    if k == 0 {
        return Err(StoreError::ZeroK);
    }
    if index.is_empty() {
        return Err(StoreError::EmptyIndex);
    }
    let mut scored = index
        .entries
        .iter()
        .map(|(id, v)| Ok((id.as_str(), cosine(query, v)?)))
        .collect::<Result<Vec<_>, StoreError>>()?;
    scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(b.0),
        other => other,
    });
    scored.truncate(k);
    Ok(scored.into_iter().map(|(id, s)| (id.to_string(), s)).collect())
}

/// In-memory demo database, persisted as JSON lines.
#[derive(Debug, Clone, Default)]
pub struct DemoStore {
    demos: Vec<DemoInstance>,
    by_id: HashMap<String, usize>,
}

impl DemoStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let demo: DemoInstance = serde_json::from_str(line).map_err(|e| StoreError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            store.insert(demo)?;
        }
        Ok(store)
    }

    /// Load a database; a missing file is an empty database.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::from_jsonl(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn insert(&mut self, demo: DemoInstance) -> Result<(), StoreError> {
        demo.validate()?;
        if self.by_id.contains_key(&demo.id) {
            return Err(StoreError::DuplicateId(demo.id));
        }
        self.by_id.insert(demo.id.clone(), self.demos.len());
        self.demos.push(demo);
        Ok(())
    }

    /// Validate, insert, and append one line to `path`.
    pub fn append(&mut self, path: impl AsRef<Path>, demo: DemoInstance) -> Result<(), StoreError> {
        let line = serde_json::to_string(&demo).expect("demo serializes");
        self.insert(demo)?;
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(file, "{line}")?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        self.demos
            .iter()
            .map(|d| serde_json::to_string(d).expect("demo serializes") + "\n")
            .collect()
    }

    pub fn demos(&self) -> &[DemoInstance] {
        &self.demos
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DemoInstance> {
        self.by_id.get(id).map(|&i| &self.demos[i])
    }

    /// Index over task texts, optionally restricted to one platform.
    pub fn build_index(&self, embedder: &dyn Embedder, platform: Option<&str>) -> Result<VectorIndex, StoreError> {
        let mut index = VectorIndex::new(embedder.dimension());
        for demo in &self.demos {
            if platform.is_none_or(|p| p == demo.platform) {
                index.insert(demo.id.clone(), embedder.embed(&demo.task)?)?;
            }
        }
        Ok(index)
    }

    /// Top-K demos for a task text on one platform.
    pub fn search(
        &self,
        embedder: &dyn Embedder,
        task: &str,
        platform: Option<&str>,
        k: usize,
    ) -> Result<Vec<(&DemoInstance, f64)>, StoreError> {
        let index = self.build_index(embedder, platform)?;
        let query = embedder.embed(task)?;
        Ok(retrieve_top_k(&index, &query, k)?
            .into_iter()
            .map(|(id, score)| (self.get(&id).expect("index built from store"), score))
            .collect())
    }
}
