//! Embedding contract, the built-in hashing embedder, section-safe chunking,
//! and an exact cosine index over section-node chunks.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TicketTree;
use crate::template::GraphTemplate;

pub const DEFAULT_CHUNK_TOKENS: usize = 256;
pub const DEFAULT_CHUNK_OVERLAP: usize = 32;
pub const DEFAULT_DIMENSION: usize = 512;
pub const MIN_HASH_DIMENSION: usize = 64;

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    /// Stable identifier; indexes built by different embedders never mix.
    fn fingerprint(&self) -> String;

    /// Returns a unit-norm vector of exactly `dimension()` finite components.
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn bucket(token: &str, dimension: usize) -> usize {
    let mut hasher = FnvHasher::default();
    hasher.write(token.as_bytes());
    (hasher.finish() % dimension as u64) as usize
}

/// Feature-hashing embedding: token counts per FNV-1a bucket, L2-normalized.
/// Text without tokens maps to the first basis vector.
pub fn hash_embed(text: &str, dimension: usize) -> Vec<f64> {
    assert!(dimension >= MIN_HASH_DIMENSION, "hash_embed needs dimension >= {MIN_HASH_DIMENSION}");
    let mut v = vec![0.0; dimension];
    for token in tokenize(text) {
        v[bucket(&token, dimension)] += 1.0;
    }
    if !normalize(&mut v) {
        v[0] = 1.0;
    }
    v
}

/// Bucket a token lands in under [`hash_embed`].
pub fn hash_bucket(token: &str, dimension: usize) -> usize {
    bucket(&token.to_lowercase(), dimension)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension < MIN_HASH_DIMENSION {
            return Err(Error::Config(format!(
                "hash embedder dimension must be >= {MIN_HASH_DIMENSION}, got {dimension}"
            )));
        }
        Ok(Self { dimension })
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

const HASH_FINGERPRINT_PREFIX: &str = "hash-fnv1a-v1/d";

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn fingerprint(&self) -> String {
        format!("{HASH_FINGERPRINT_PREFIX}{}", self.dimension)
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        hash_embed(text, self.dimension)
    }
}

/// Reconstructs a built-in embedder from its fingerprint.
pub fn embedder_from_fingerprint(fingerprint: &str) -> Result<Arc<dyn Embedder>> {
    let dim = fingerprint
        .strip_prefix(HASH_FINGERPRINT_PREFIX)
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(|| Error::Config(format!("unknown embedder fingerprint {fingerprint:?}")))?;
    Ok(Arc::new(HashEmbedder::new(dim)?))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        (dot(a, b) / denom).clamp(-1.0, 1.0)
    }
}

/// Scales `v` to unit length in place; returns false for a zero vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Window sizes for chunking, in whitespace-delimited tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    max_units: usize,
    overlap: usize,
}

impl ChunkParams {
    pub fn new(max_units: usize, overlap: usize) -> Result<Self> {
        if max_units == 0 || overlap >= max_units {
            return Err(Error::Config(format!(
                "chunking needs max_units > overlap >= 0, got {max_units}/{overlap}"
            )));
        }
        Ok(Self { max_units, overlap })
    }

    pub fn max_units(&self) -> usize {
        self.max_units
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            max_units: DEFAULT_CHUNK_TOKENS,
            overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }
}

/// A window of the source text. Byte ranges of consecutive chunks overlap by
/// exactly the shared tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub index: usize,
    pub text: String,
    pub start_token: usize,
    pub end_token: usize,
    pub byte_start: usize,
    pub byte_end: usize,
}

/// Splits text into windows of at most `max_units` tokens, consecutive
/// windows sharing `overlap` tokens. Leading and trailing whitespace stays
/// attached so the de-overlapped concatenation is the original text.
pub fn chunk_node_text(text: &str, params: ChunkParams) -> Vec<Chunk> {
    let starts: Vec<usize> = text
        .char_indices()
        .filter(|&(i, c)| !c.is_whitespace() && (i == 0 || text[..i].chars().next_back().is_some_and(char::is_whitespace)))
        .map(|(i, _)| i)
        .collect();
    let n = starts.len();
    if n == 0 {
        return Vec::new();
    }
    let stride = params.max_units - params.overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + params.max_units).min(n);
        let byte_start = if start == 0 { 0 } else { starts[start] };
        let byte_end = if end == n { text.len() } else { starts[end] };
        chunks.push(Chunk {
            index: chunks.len(),
            text: text[byte_start..byte_end].to_string(),
            start_token: start,
            end_token: end,
            byte_start,
            byte_end,
        });
        if end == n {
            break;
        }
        start += stride;
    }
    chunks
}

/// Concatenates chunks, dropping each chunk's overlap with its predecessor.
pub fn reconstruct(chunks: &[Chunk]) -> String {
    let mut out = String::new();
    let mut covered = 0usize;
    for chunk in chunks {
        let skip = covered.saturating_sub(chunk.byte_start);
        out.push_str(&chunk.text[skip..]);
        covered = chunk.byte_end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VectorKey {
    pub ticket_id: String,
    pub section: String,
    pub chunk_index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorEntry {
    pub key: VectorKey,
    pub vector: Vec<f64>,
    /// Length of the embedded chunk in characters.
    pub text_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub key: VectorKey,
    pub score: f64,
}

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Exact brute-force cosine index. Entries are unit vectors, so cosine is a
/// dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    fingerprint: String,
    entries: Vec<VectorEntry>,
    by_section: BTreeMap<String, Vec<usize>>,
}

impl VectorIndex {
    pub fn new(dimension: usize, fingerprint: impl Into<String>) -> Self {
        Self {
            dimension,
            fingerprint: fingerprint.into(),
            entries: Vec::new(),
            by_section: BTreeMap::new(),
        }
    }

    pub fn for_embedder(embedder: &dyn Embedder) -> Self {
        Self::new(embedder.dimension(), embedder.fingerprint())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn entries(&self) -> &[VectorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.by_section.keys().map(String::as_str)
    }

    pub fn section_entries(&self, section: &str) -> impl Iterator<Item = &VectorEntry> {
        self.by_section
            .get(section)
            .into_iter()
            .flatten()
            .map(|&i| &self.entries[i])
    }

    pub fn insert(&mut self, entry: VectorEntry) -> Result<()> {
        if entry.vector.len() != self.dimension {
            return Err(Error::Config(format!(
                "vector for {:?} has dimension {}, index expects {}",
                entry.key,
                entry.vector.len(),
                self.dimension
            )));
        }
        if entry.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("vector for {:?} is not finite", entry.key)));
        }
        let n = norm(&entry.vector);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!("vector for {:?} has norm {n}", entry.key)));
        }
        self.by_section
            .entry(entry.key.section.clone())
            .or_default()
            .push(self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.dimension {
            return Err(Error::Config(format!(
                "query dimension {} does not match index {} ({})",
                query.len(),
                self.dimension,
                self.fingerprint
            )));
        }
        Ok(())
    }

    /// Scores every entry of `section` against `query`.
    pub fn scan_section<'a>(&'a self, section: &str, query: &[f64]) -> Result<Vec<(&'a VectorEntry, f64)>> {
        self.check_query(query)?;
        Ok(self
            .section_entries(section)
            .map(|e| (e, dot(&e.vector, query).clamp(-1.0, 1.0)))
            .collect())
    }

    /// Exact top-k by cosine, descending, ties by ascending key.
    pub fn search(&self, section: &str, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        let scored = self.scan_section(section, query)?;
        Ok(top_k(scored.into_iter().map(|(e, s)| (&e.key, s)), k)
            .into_iter()
            .map(|(key, score)| Hit {
                key: key.clone(),
                score,
            })
            .collect())
    }
}

/// Descending by score, ascending by key on ties.
pub fn rank_order<K: Ord>(a: &(K, f64), b: &(K, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Selects and sorts the best `k` items.
pub fn top_k<K: Ord>(items: impl IntoIterator<Item = (K, f64)>, k: usize) -> Vec<(K, f64)> {
    let mut items: Vec<(K, f64)> = items.into_iter().collect();
    if k == 0 {
        return Vec::new();
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, rank_order);
        items.truncate(k);
    }
    items.sort_by(rank_order);
    items
}

/// Embeds every chunk of every embeddable section node.
pub fn index_trees<'a>(
    trees: impl IntoIterator<Item = &'a TicketTree>,
    template: &GraphTemplate,
    embedder: &dyn Embedder,
    params: ChunkParams,
) -> Result<VectorIndex> {
    let work: Vec<(VectorKey, String)> = trees
        .into_iter()
        .flat_map(|tree| tree.nodes.iter())
        .filter(|node| template.section(&node.id.section).is_some_and(|s| s.embeddable))
        .flat_map(|node| {
            chunk_node_text(&node.text, params).into_iter().map(move |chunk| {
                (
                    VectorKey {
                        ticket_id: node.id.ticket_id.clone(),
                        section: node.id.section.clone(),
                        chunk_index: chunk.index as u32,
                    },
                    chunk.text,
                )
            })
        })
        .collect();
    let vectors: Vec<Vec<f64>> = work.par_iter().map(|(_, text)| embedder.embed(text)).collect();
    let mut index = VectorIndex::for_embedder(embedder);
    for ((key, text), vector) in work.into_iter().zip(vectors) {
        index.insert(VectorEntry {
            key,
            vector,
            text_len: text.chars().count(),
        })?;
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn short_text_is_one_chunk() {
        let text = words(10);
        let chunks = chunk_node_text(&text, ChunkParams::default());
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
    }

    #[test]
    fn three_hundred_tokens_make_two_chunks() {
        let text = words(300);
        let chunks = chunk_node_text(&text, ChunkParams::new(256, 32).unwrap());
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].start_token, 224);
        assert!(chunks[1].text.starts_with("w224 "));
        assert_eq!(chunks[0].end_token, 256);
    }

    #[test]
    fn empty_text_has_no_chunks() {
        assert!(chunk_node_text("", ChunkParams::default()).is_empty());
    }

    #[test]
    fn invalid_chunk_params() {
        assert!(ChunkParams::new(32, 32).is_err());
        assert!(ChunkParams::new(0, 0).is_err());
        assert!(ChunkParams::new(1, 0).is_ok());
    }

    #[test]
    fn hash_embed_is_unit_and_deterministic() {
        let a = hash_embed("login issue", 512);
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a, hash_embed("Login  ISSUE", 512));
        assert!((cosine(&a, &hash_embed("login issue", 512)) - 1.0).abs() < 1e-12);
        let empty = hash_embed("", 512);
        assert_eq!(empty[0], 1.0);
        assert!((norm(&empty) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_buckets_give_zero_cosine() {
        let dim = 512;
        let (a, b) = ("alpha", "omega");
        // pick tokens whose buckets differ before relying on orthogonality
        assert_ne!(hash_bucket(a, dim), hash_bucket(b, dim));
        assert_eq!(cosine(&hash_embed(a, dim), &hash_embed(b, dim)), 0.0);
    }

    #[test]
    fn fingerprint_round_trip() {
        let e = HashEmbedder::new(128).unwrap();
        let back = embedder_from_fingerprint(&e.fingerprint()).unwrap();
        assert_eq!(back.dimension(), 128);
        assert!(embedder_from_fingerprint("bert-base").is_err());
        assert!(HashEmbedder::new(8).is_err());
    }

    fn random_unit(rng: &mut impl rand::Rng, dim: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&mut v);
        v
    }

    fn index_of(vectors: &[Vec<f64>]) -> VectorIndex {
        let mut index = VectorIndex::new(vectors[0].len(), "test");
        for (i, v) in vectors.iter().enumerate() {
            index
                .insert(VectorEntry {
                    key: VectorKey {
                        ticket_id: format!("T-{i:02}"),
                        section: "summary".into(),
                        chunk_index: 0,
                    },
                    vector: v.clone(),
                    text_len: 1,
                })
                .unwrap();
        }
        index
    }

    #[test]
    fn search_matches_exhaustive_scan() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vectors: Vec<Vec<f64>> = (0..20).map(|_| random_unit(&mut rng, 16)).collect();
        let index = index_of(&vectors);
        let query = random_unit(&mut rng, 16);
        let got = index.search("summary", &query, 5).unwrap();
        let mut oracle: Vec<(String, f64)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("T-{i:02}"), cosine(v, &query)))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(got.len(), 5);
        for (hit, (id, score)) in got.iter().zip(&oracle) {
            assert_eq!(&hit.key.ticket_id, id);
            assert!((hit.score - score).abs() < 1e-9);
        }
    }

    #[test]
    fn search_edge_cases() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let vectors: Vec<Vec<f64>> = (0..4).map(|_| random_unit(&mut rng, 8)).collect();
        let index = index_of(&vectors);
        let first = index.search("summary", &vectors[2], 1).unwrap();
        assert_eq!(first[0].key.ticket_id, "T-02");
        assert!((first[0].score - 1.0).abs() < 1e-12);
        assert_eq!(index.search("summary", &vectors[0], 50).unwrap().len(), 4);
        assert!(index.search("description", &vectors[0], 3).unwrap().is_empty());
        assert!(matches!(index.search("summary", &[1.0; 3], 3), Err(Error::Config(_))));
    }

    #[test]
    fn ties_break_by_key() {
        let v = hash_embed("same", 64);
        let index = index_of(&[v.clone(), v.clone(), v.clone()]);
        let hits = index.search("summary", &v, 3).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.key.ticket_id.as_str()).collect();
        assert_eq!(ids, vec!["T-00", "T-01", "T-02"]);
    }

    #[test]
    fn rejects_non_unit_vectors() {
        let mut index = VectorIndex::new(2, "t");
        let err = index.insert(VectorEntry {
            key: VectorKey { ticket_id: "A".into(), section: "s".into(), chunk_index: 0 },
            vector: vec![1.0, 1.0],
            text_len: 0,
        });
        assert!(err.is_err());
    }

    proptest! {
        #[test]
        fn chunking_reconstructs_text(
            tokens in proptest::collection::vec("[a-z]{1,6}", 1..120),
            seps in proptest::collection::vec(prop_oneof![Just(" "), Just("  "), Just("\n"), Just("\t ")], 120),
            lead in prop_oneof![Just(""), Just("  "), Just("\n")],
            max_units in 2usize..40,
            overlap_frac in 0.0f64..1.0,
        ) {
            let overlap = ((max_units - 1) as f64 * overlap_frac) as usize;
            let mut text = lead.to_string();
            for (i, t) in tokens.iter().enumerate() {
                text.push_str(t);
                text.push_str(seps[i]);
            }
            let params = ChunkParams::new(max_units, overlap).unwrap();
            let chunks = chunk_node_text(&text, params);
            prop_assert_eq!(reconstruct(&chunks), text.clone());
            for c in &chunks {
                prop_assert!(c.text.split_whitespace().count() <= max_units);
            }
            if tokens.len() <= max_units {
                prop_assert_eq!(chunks.len(), 1);
            }
        }

        #[test]
        fn cosine_equals_dot_for_unit_vectors(a in "[a-z ]{0,40}", b in "[a-z ]{0,40}") {
            let (va, vb) = (hash_embed(&a, 64), hash_embed(&b, 64));
            prop_assert!((cosine(&va, &vb) - dot(&va, &vb)).abs() < 1e-9);
        }
    }
}
