//! Future-state approximation by nearest-neighbour lookup over the search
//! dataset.
//!
//! States are embedded with signed feature hashing over lowercase
//! alphanumeric tokens, then L2-normalised. Lookup is an exact cosine scan.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::SearchRecord;

pub const DEFAULT_DIM: usize = 256;

/// L2-normalised vector (or all zeros for empty input).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine similarity; zero vectors have similarity 0 with everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Maps text to a fixed-dimension vector.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Embedding;
}

/// Signed feature-hashing bag of tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: DEFAULT_DIM }
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercase runs of alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Embedding {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = fnv1a(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Embedding(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub embedding: Embedding,
    pub state: String,
    pub successor: Option<String>,
}

/// Immutable corpus of search states with their successors.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

/// How the approximate future state is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Successor of the most similar record.
    #[default]
    Semantic,
    /// Successor of a uniformly random record.
    Random,
    /// The query state itself.
    None,
}

impl RetrievalIndex {
    /// Indexes every record; successors are resolved through `next_id`.
    pub fn build(records: &[SearchRecord], embedder: &dyn Embedder) -> Result<Self> {
        let mut by_id: HashMap<&str, &SearchRecord> = HashMap::with_capacity(records.len());
        for r in records {
            if by_id.insert(r.id.as_str(), r).is_some() {
                return Err(Error::Retrieval(format!("duplicate record id `{}`", r.id)));
            }
        }
        let entries = records
            .iter()
            .map(|r| IndexEntry {
                id: r.id.clone(),
                embedding: embedder.embed(&r.state),
                state: r.state.clone(),
                successor: r.next_id.as_deref().and_then(|n| by_id.get(n)).map(|s| s.state.clone()),
            })
            .collect();
        Ok(RetrievalIndex { dim: embedder.dim(), entries })
    }

    /// Builds directly from entries (ids must be unique).
    pub fn from_entries(dim: usize, entries: Vec<IndexEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Retrieval(format!("duplicate record id `{}`", e.id)));
            }
            if e.embedding.dim() != dim {
                return Err(Error::Dimension { expected: dim, got: e.embedding.dim() });
            }
        }
        Ok(RetrievalIndex { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Position and cosine of the most similar entry; ties go to the earliest
    /// entry. `None` for an empty index.
    pub fn nearest(&self, query: &Embedding) -> Result<Option<(usize, f64)>> {
        if query.dim() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: query.dim() });
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let sim = cosine(&query.0, &e.embedding.0);
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        Ok(best)
    }

    /// Approximate future of `state`: the successor of the nearest record, or
    /// `state` itself when there is no usable match.
    pub fn future_state(&self, state: &str, embedder: &dyn Embedder) -> String {
        let query = embedder.embed(state);
        match self.nearest(&query) {
            Ok(Some((i, _))) => self.entries[i].successor.clone().unwrap_or_else(|| state.to_string()),
            _ => state.to_string(),
        }
    }

    /// Successor of a uniformly random record (falls back like `future_state`).
    pub fn random_future(&self, state: &str, rng: &mut impl Rng) -> String {
        if self.entries.is_empty() {
            return state.to_string();
        }
        let i = rng.random_range(0..self.entries.len());
        self.entries[i].successor.clone().unwrap_or_else(|| state.to_string())
    }

    pub fn approximate_future(
        &self,
        state: &str,
        embedder: &dyn Embedder,
        mode: RetrievalMode,
        rng: &mut impl Rng,
    ) -> String {
        match mode {
            RetrievalMode::Semantic => self.future_state(state, embedder),
            RetrievalMode::Random => self.random_future(state, rng),
            RetrievalMode::None => state.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, state: &str, next: Option<&str>) -> SearchRecord {
        SearchRecord {
            id: id.into(),
            task_id: "t".into(),
            turn: 1,
            state: state.into(),
            action: 0,
            q: vec![],
            quality_reward: 0.0,
            cost_picousd: 0,
            next_id: next.map(Into::into),
        }
    }

    #[test]
    fn embed_basics() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed("").0, vec![0.0; DEFAULT_DIM]);
        assert_eq!(e.embed("refund timing"), e.embed("refund timing"));
        assert!((e.embed("refund timing question").norm() - 1.0).abs() < 1e-12);
        assert_eq!(e.embed("Refund, TIMING!"), e.embed("refund timing"));
    }

    #[test]
    fn similar_text_is_closer() {
        let e = HashingEmbedder::default();
        let q = e.embed("refund timing question");
        let near = cosine(&q.0, &e.embed("refund timing question please").0);
        let far = cosine(&q.0, &e.embed("the weather in lisbon is mild").0);
        assert!(near > far, "{near} vs {far}");
        // 3 shared of 3 and 4 tokens, no hash collisions among these 4 tokens
        assert!((near - 3.0 / 12f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn index_chain_successors() {
        let e = HashingEmbedder::default();
        let records = vec![
            record("a", "alpha start", Some("b")),
            record("b", "beta middle", Some("c")),
            record("c", "gamma end", None),
        ];
        let index = RetrievalIndex::build(&records, &e).unwrap();
        assert_eq!(index.len(), 3);
        assert_eq!(index.entries()[2].successor, None);
        assert_eq!(index.future_state("alpha start", &e), "beta middle");
        assert_eq!(index.future_state("gamma end", &e), "gamma end");
        assert_eq!(RetrievalIndex::build(&records, &e).unwrap(), index);

        let empty = RetrievalIndex::build(&[], &e).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.nearest(&e.embed("x")).unwrap(), None);
        assert_eq!(empty.future_state("anything", &e), "anything");

        let dup = vec![record("a", "x", None), record("a", "y", None)];
        assert!(RetrievalIndex::build(&dup, &e).is_err());
    }

    #[test]
    fn nearest_on_hand_vectors() {
        let entries = vec![
            IndexEntry { id: "id1".into(), embedding: Embedding(vec![1.0, 0.0]), state: "s1".into(), successor: None },
            IndexEntry { id: "id2".into(), embedding: Embedding(vec![0.0, 1.0]), state: "s2".into(), successor: None },
        ];
        let index = RetrievalIndex::from_entries(2, entries).unwrap();
        let n = (0.9f64 * 0.9 + 0.1 * 0.1).sqrt();
        let (i, sim) = index.nearest(&Embedding(vec![0.9 / n, 0.1 / n])).unwrap().unwrap();
        assert_eq!(index.entries()[i].id, "id1");
        assert!((sim - 0.9 / n).abs() < 1e-12);
        let (i, sim) = index.nearest(&Embedding(vec![0.0, 1.0])).unwrap().unwrap();
        assert_eq!((i, sim), (1, 1.0));
        assert!(matches!(index.nearest(&Embedding(vec![1.0])), Err(Error::Dimension { .. })));
    }
}
