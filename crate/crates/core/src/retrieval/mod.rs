//! Dense retrieval: embedding providers, an exact cosine index, and the two
//! retrieval modes built on it (top-1 API per description, top-k similar
//! code windows).

mod embed;
mod persist;
mod search;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{embed, EmbeddingProvider, HashProjection, HttpEmbedder, ENV_EMBED_API_KEY, ENV_EMBED_BASE_URL};
pub use search::{retrieve_apis, retrieve_similar, ApiRetrievalSet, RetrievalHit, SimilarWindow};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text has no embeddable tokens")]
    NoTokens,
    #[error("zero vector")]
    ZeroVector,
    #[error("non-finite vector component")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate item id: {0}")]
    DuplicateId(String),
    #[error("index build failed for {} item(s): {}", ids.len(), ids.join(", "))]
    BuildFailed { ids: Vec<String>, first_error: String },
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A finite, fixed-dimension real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    components: Vec<f64>,
}

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self, RetrievalError> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        Ok(Vector { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn norm(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Vector, RetrievalError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(RetrievalError::ZeroVector);
        }
        Ok(Vector { components: self.components.iter().map(|c| c / norm).collect() })
    }
}

impl From<Vec<f32>> for Vector {
    fn from(v: Vec<f32>) -> Self {
        Vector { components: v.into_iter().map(f64::from).collect() }
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64, RetrievalError> {
    cosine_slices(u.components(), v.components())
}

fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64, RetrievalError> {
    if u.len() != v.len() {
        return Err(RetrievalError::DimMismatch { expected: u.len(), found: v.len() });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// What an index's vectors were computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    /// Generated natural-language descriptions.
    TextDescription,
    /// The API's source code.
    RawCode,
}

impl fmt::Display for SourceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceMode::TextDescription => "text_description",
            SourceMode::RawCode => "raw_code",
        })
    }
}

impl FromStr for SourceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text_description" => Ok(SourceMode::TextDescription),
            "raw_code" => Ok(SourceMode::RawCode),
            other => Err(format!("unknown source mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    /// Unit-normalized, stored at single precision.
    pub vector: Vec<f32>,
}

impl IndexEntry {
    fn as_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&c| f64::from(c)).collect()
    }
}

/// Immutable set of unit vectors supporting exact top-k cosine search.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    entries: Vec<IndexEntry>,
    dim: usize,
    provider_id: String,
    source_mode: SourceMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub score: f64,
}

/// Orders by descending score, then ascending id.
fn rank_order(a: &ScoredId, b: &ScoredId) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.id.cmp(&b.id))
}

/// Heap wrapper whose maximum is the *worst* ranked element.
struct Worst(ScoredId);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

impl VectorIndex {
    /// Embeds every item, normalizes it and keeps input order.
    pub fn build(
        items: &[(String, String)],
        provider: &dyn EmbeddingProvider,
        source_mode: SourceMode,
    ) -> Result<Self, RetrievalError> {
        let mut seen = HashSet::new();
        for (id, _) in items {
            if !seen.insert(id.as_str()) {
                return Err(RetrievalError::DuplicateId(id.clone()));
            }
        }
        let embedded: Vec<Result<Vector, RetrievalError>> =
            items.par_iter().map(|(_, text)| embed(text, provider).and_then(|v| v.normalized())).collect();
        let mut failed = Vec::new();
        let mut first_error = None;
        let mut entries = Vec::with_capacity(items.len());
        for ((id, _), result) in items.iter().zip(embedded) {
            match result {
                Ok(v) => entries
                    .push(IndexEntry { id: id.clone(), vector: v.components().iter().map(|&c| c as f32).collect() }),
                Err(err) => {
                    failed.push(id.clone());
                    first_error.get_or_insert_with(|| err.to_string());
                }
            }
        }
        if !failed.is_empty() {
            return Err(RetrievalError::BuildFailed { ids: failed, first_error: first_error.unwrap_or_default() });
        }
        Ok(VectorIndex { entries, dim: provider.dim(), provider_id: provider.id(), source_mode })
    }

    pub(crate) fn from_parts(
        entries: Vec<IndexEntry>,
        dim: usize,
        provider_id: String,
        source_mode: SourceMode,
    ) -> Self {
        VectorIndex { entries, dim, provider_id, source_mode }
    }

    pub fn empty(dim: usize, provider_id: impl Into<String>, source_mode: SourceMode) -> Self {
        VectorIndex { entries: Vec::new(), dim, provider_id: provider_id.into(), source_mode }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn source_mode(&self) -> SourceMode {
        self.source_mode
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// Exact top-`k` by descending cosine, ties broken by ascending id.
    pub fn top_k(&self, query: &Vector, k: usize) -> Result<Vec<ScoredId>, RetrievalError> {
        self.top_k_filtered(query, k, |_| true)
    }

    /// [`top_k`](Self::top_k) over the entries accepted by `keep`.
    pub fn top_k_filtered(
        &self,
        query: &Vector,
        k: usize,
        keep: impl Fn(&str) -> bool,
    ) -> Result<Vec<ScoredId>, RetrievalError> {
        if self.entries.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        if query.dim() != self.dim {
            return Err(RetrievalError::DimMismatch { expected: self.dim, found: query.dim() });
        }
        let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
        for entry in self.entries.iter().filter(|e| keep(&e.id)) {
            let score = cosine_slices(query.components(), &entry.as_f64())?;
            let candidate = ScoredId { id: entry.id.clone(), score };
            if heap.len() < k {
                heap.push(Worst(candidate));
            } else if let Some(worst) = heap.peek() {
                if rank_order(&candidate, &worst.0) == Ordering::Less {
                    heap.pop();
                    heap.push(Worst(candidate));
                }
            }
        }
        let mut out: Vec<ScoredId> = heap.into_iter().map(|w| w.0).collect();
        out.sort_by(rank_order);
        Ok(out)
    }
}
