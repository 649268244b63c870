//! Embedding primitives: vectors, cosine similarity, the deterministic
//! test embedder, and the exact-scan vector index.
//!
//! The index is deliberately simple: a full scan per query with an
//! instrumented comparison counter, so retrieval cost is observable and
//! results are exactly reproducible. Ties are broken by ascending key.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::hash::Hash;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{MemoraError, Result};

/// A dense embedding with finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MemoraError::NonFiniteValue);
        }
        Ok(Self { values })
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity, clamped to [-1, 1] against float drift.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dims() != v.dims() {
        return Err(MemoraError::DimensionMismatch {
            expected: u.dims(),
            actual: v.dims(),
        });
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(MemoraError::ZeroVector);
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Text-to-vector provider. Implementations must be deterministic for
/// index rebuilds to reproduce the same geometry.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hermetic bag-of-tokens embedder: each lowercased whitespace token is
/// hashed into one of `dims` buckets, counts accumulate, and the vector
/// is L2-normalized. Same text always yields the identical vector.
#[derive(Debug, Clone)]
pub struct TestEmbedder {
    dims: usize,
}

pub const DEFAULT_TEST_DIMS: usize = 64;

impl TestEmbedder {
    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "embedder needs at least one dimension");
        Self { dims }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
}

impl Default for TestEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_TEST_DIMS)
    }
}

impl Embedder for TestEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut values = vec![0.0_f64; self.dims];
        let mut tokens = 0usize;
        for token in text.split_whitespace() {
            let token = token.to_lowercase();
            let bucket = (fnv1a(token.as_bytes()) % self.dims as u64) as usize;
            values[bucket] += 1.0;
            tokens += 1;
        }
        if tokens == 0 {
            return Err(MemoraError::EmptyField("text"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut values {
            *v /= norm;
        }
        EmbeddingVector::new(values)
    }
}

/// Exact-scan similarity index over keyed vectors.
///
/// Every query scores the full contents, incrementing the comparison
/// counter by the index size; results come back score-descending with
/// ties broken by ascending key. Queries are read-only and may run
/// concurrently; inserts and removals need exclusive access.
#[derive(Debug)]
pub struct VectorIndex<K> {
    vectors: BTreeMap<K, EmbeddingVector>,
    dims: Option<usize>,
    comparisons: AtomicU64,
}

impl<K: Copy + Ord + Eq + Hash + Debug> VectorIndex<K> {
    pub fn new() -> Self {
        Self {
            vectors: BTreeMap::new(),
            dims: None,
            comparisons: AtomicU64::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dims(&self) -> Option<usize> {
        self.dims
    }

    /// Total similarity evaluations performed by queries so far.
    pub fn comparisons(&self) -> u64 {
        self.comparisons.load(Ordering::Relaxed)
    }

    pub fn contains(&self, key: &K) -> bool {
        self.vectors.contains_key(key)
    }

    pub fn get(&self, key: &K) -> Option<&EmbeddingVector> {
        self.vectors.get(key)
    }

    /// Insert or replace the vector stored under `key`.
    pub fn insert(&mut self, key: K, vector: EmbeddingVector) -> Result<()> {
        match self.dims {
            Some(d) if d != vector.dims() => {
                return Err(MemoraError::DimensionMismatch {
                    expected: d,
                    actual: vector.dims(),
                })
            }
            None => self.dims = Some(vector.dims()),
            _ => {}
        }
        self.vectors.insert(key, vector);
        Ok(())
    }

    pub fn remove(&mut self, key: &K) -> Option<EmbeddingVector> {
        let removed = self.vectors.remove(key);
        if self.vectors.is_empty() {
            self.dims = None;
        }
        removed
    }

    fn scored(&self, query: &EmbeddingVector) -> Result<Vec<(K, f64)>> {
        self.comparisons
            .fetch_add(self.vectors.len() as u64, Ordering::Relaxed);
        let mut scored = Vec::with_capacity(self.vectors.len());
        for (key, vector) in &self.vectors {
            scored.push((*key, cosine(query, vector)?));
        }
        // Stable sort keeps the BTreeMap's ascending-key order for ties.
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores"));
        Ok(scored)
    }

    /// Top `k` keys by cosine similarity to `query`.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(K, f64)>> {
        let mut scored = self.scored(query)?;
        scored.truncate(k);
        Ok(scored)
    }

    /// All keys whose similarity to `query` is at least `threshold`.
    pub fn scan_at_least(&self, query: &EmbeddingVector, threshold: f64) -> Result<Vec<(K, f64)>> {
        let mut scored = self.scored(query)?;
        scored.retain(|(_, s)| *s >= threshold);
        Ok(scored)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &EmbeddingVector)> {
        self.vectors.iter()
    }
}

impl<K: Copy + Ord + Eq + Hash + Debug> Default for VectorIndex<K> {
    fn default() -> Self {
        Self::new()
    }
}
