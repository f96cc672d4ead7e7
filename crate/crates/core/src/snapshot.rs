//! On-disk snapshot: graph, section index and baseline index in one
//! directory, written atomically and verified on load.
//!
//! Layout:
//!
//! | file                    | content                                        |
//! |-------------------------|------------------------------------------------|
//! | `manifest.json`         | format version, snapshot id, build parameters, counts, per-file SHA-256 |
//! | `template.json`         | the section template                           |
//! | `trees.jsonl`           | one ticket tree per line, ascending ticket id  |
//! | `edges.jsonl`           | one inter-ticket edge per line, sorted by key  |
//! | `index.bin`             | section-chunk vectors                          |
//! | `baseline.bin`          | baseline chunk vectors                         |
//! | `baseline_chunks.jsonl` | baseline chunk texts, in vector order          |
//!
//! Vector files: magic `TGVI`, version byte, dimension (u32), count (u64),
//! fingerprint (u32 length + UTF-8), then per entry the key
//! (ticket id and section as u32 length + UTF-8, chunk index u32, text length
//! u64), then all vectors as little-endian f64, `count * dimension` values.
//! All integers are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::AdapterHandle;
use crate::baseline::{build_baseline, BaselineChunk, BaselineIndex};
use crate::builder::{build_graph, GraphBuildConfig};
use crate::embedding::{ChunkParams, Embedder, VectorEntry, VectorIndex, VectorKey};
use crate::error::{Error, Result};
use crate::model::{BuildParams, InterTicketEdge, KnowledgeGraph, TicketTree};
use crate::parser::RawTicket;
use crate::template::GraphTemplate;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const VECTOR_MAGIC: &[u8; 4] = b"TGVI";
const VECTOR_VERSION: u8 = 1;

const DATA_FILES: [&str; 6] = [
    "template.json",
    "trees.jsonl",
    "edges.jsonl",
    "index.bin",
    "baseline.bin",
    "baseline_chunks.jsonl",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotCounts {
    pub tickets: usize,
    pub nodes: usize,
    pub edges: usize,
    pub index_vectors: usize,
    pub baseline_chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// SHA-256 over the data file digests; identical inputs give identical ids.
    pub snapshot_id: String,
    pub build_params: BuildParams,
    pub chunking: ChunkParams,
    pub baseline_chunking: ChunkParams,
    pub counts: SnapshotCounts,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub manifest: Manifest,
    pub graph: KnowledgeGraph,
    pub index: VectorIndex,
    pub baseline: BaselineIndex,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SnapshotConfig {
    pub graph: GraphBuildConfig,
    pub baseline_chunking: ChunkParams,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_vectors(index: &VectorIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(VECTOR_MAGIC);
    out.push(VECTOR_VERSION);
    out.extend_from_slice(&(index.dimension() as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    put_str(&mut out, index.fingerprint());
    for e in index.entries() {
        put_str(&mut out, &e.key.ticket_id);
        put_str(&mut out, &e.key.section);
        out.extend_from_slice(&e.key.chunk_index.to_le_bytes());
        out.extend_from_slice(&(e.text_len as u64).to_le_bytes());
    }
    for e in index.entries() {
        for x in &e.vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated vector file")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

pub fn decode_vectors(bytes: &[u8]) -> std::result::Result<VectorIndex, String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != VECTOR_MAGIC {
        return Err("bad magic".into());
    }
    let version = r.take(1)?[0];
    if version != VECTOR_VERSION {
        return Err(format!("unsupported vector format version {version}"));
    }
    let dimension = r.u32()? as usize;
    let count = usize::try_from(r.u64()?).map_err(|e| e.to_string())?;
    let fingerprint = r.string()?;
    let mut keys = Vec::new();
    for _ in 0..count {
        let ticket_id = r.string()?;
        let section = r.string()?;
        let chunk_index = r.u32()?;
        let text_len = usize::try_from(r.u64()?).map_err(|e| e.to_string())?;
        keys.push((VectorKey { ticket_id, section, chunk_index }, text_len));
    }
    let mut index = VectorIndex::new(dimension, fingerprint);
    for (key, text_len) in keys {
        let raw = r.take(dimension.checked_mul(8).ok_or("dimension overflow")?)?;
        let vector = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        index
            .insert(VectorEntry { key, vector, text_len })
            .map_err(|e| e.to_string())?;
    }
    if r.at != bytes.len() {
        return Err("trailing bytes after vectors".into());
    }
    Ok(index)
}

impl Snapshot {
    /// Builds graph, section index and baseline from one ticket batch with a
    /// single embedder. Returns build warnings alongside.
    pub fn build(
        tickets: &[RawTicket],
        template: &GraphTemplate,
        adapter: Option<&AdapterHandle>,
        embedder: &dyn Embedder,
        config: &SnapshotConfig,
    ) -> Result<(Self, Vec<String>)> {
        let built = build_graph(tickets, template, adapter, embedder, &config.graph)?;
        let baseline = build_baseline(tickets, embedder, config.baseline_chunking)?;
        let mut snapshot = Snapshot {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                snapshot_id: String::new(),
                build_params: built.graph.build_params.clone(),
                chunking: config.graph.chunking,
                baseline_chunking: config.baseline_chunking,
                counts: SnapshotCounts {
                    tickets: 0,
                    nodes: 0,
                    edges: 0,
                    index_vectors: 0,
                    baseline_chunks: 0,
                },
                files: BTreeMap::new(),
            },
            graph: built.graph,
            index: built.index,
            baseline,
        };
        snapshot.encode()?;
        Ok((snapshot, built.warnings))
    }

    pub fn id(&self) -> &str {
        &self.manifest.snapshot_id
    }

    /// Serializes every data file and refreshes the manifest's digests,
    /// counts and id.
    fn encode(&mut self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let mut template = serde_json::to_vec_pretty(&self.graph.template)?;
        template.push(b'\n');
        let files: Vec<(&'static str, Vec<u8>)> = vec![
            ("template.json", template),
            ("trees.jsonl", jsonl(self.graph.trees.values())?),
            ("edges.jsonl", jsonl(&self.graph.edges)?),
            ("index.bin", encode_vectors(&self.index)),
            ("baseline.bin", encode_vectors(self.baseline.vectors())),
            ("baseline_chunks.jsonl", jsonl(self.baseline.chunks())?),
        ];
        let digests: BTreeMap<String, String> =
            files.iter().map(|(name, bytes)| (name.to_string(), sha256_hex(bytes))).collect();
        let joined: String = digests.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        self.manifest.snapshot_id = sha256_hex(joined.as_bytes());
        self.manifest.files = digests;
        self.manifest.counts = SnapshotCounts {
            tickets: self.graph.ticket_count(),
            nodes: self.graph.trees.values().map(|t| t.nodes.len() + 1).sum(),
            edges: self.graph.edges.len(),
            index_vectors: self.index.len(),
            baseline_chunks: self.baseline.chunks().len(),
        };
        Ok(files)
    }

    /// Writes the snapshot to `dir` by filling a sibling temporary directory
    /// and renaming it into place. An existing snapshot at `dir` is replaced.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        let files = self.encode()?;
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let name = dir
            .file_name()
            .ok_or_else(|| Error::snapshot(dir, "snapshot path has no directory name"))?
            .to_string_lossy()
            .into_owned();
        let pid = std::process::id();
        let tmp = parent.join(format!(".{name}.tmp-{pid}"));
        let old = parent.join(format!(".{name}.old-{pid}"));
        for stale in [&tmp, &old] {
            if stale.exists() {
                fs::remove_dir_all(stale)?;
            }
        }
        fs::create_dir(&tmp)?;
        for (file, bytes) in &files {
            fs::write(tmp.join(file), bytes)?;
        }
        let mut manifest = serde_json::to_vec_pretty(&self.manifest)?;
        manifest.push(b'\n');
        fs::write(tmp.join(MANIFEST_FILE), manifest)?;
        if dir.exists() {
            fs::rename(dir, &old)?;
        }
        fs::rename(&tmp, dir)?;
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        Ok(())
    }

    /// Loads and verifies a snapshot: every data file must match its digest,
    /// and all vectors must come from the embedder named in the build
    /// parameters.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(Error::NoSnapshot(dir.to_path_buf()));
        }
        let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)
            .map_err(|e| Error::snapshot(&manifest_path, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::snapshot(
                dir,
                format!("unsupported format version {}", manifest.format_version),
            ));
        }
        let mut data = BTreeMap::new();
        for file in DATA_FILES {
            let path = dir.join(file);
            let bytes = fs::read(&path).map_err(|e| Error::snapshot(&path, e.to_string()))?;
            let expected = manifest.files.get(file).ok_or_else(|| Error::snapshot(dir, format!("manifest lacks {file}")))?;
            if &sha256_hex(&bytes) != expected {
                return Err(Error::snapshot(&path, "content does not match manifest digest"));
            }
            data.insert(file, bytes);
        }
        let bad = |file: &str, msg: String| Error::snapshot(dir.join(file), msg);

        let template = GraphTemplate::from_json(&String::from_utf8_lossy(&data["template.json"]))?;
        let mut trees = BTreeMap::new();
        for line in data["trees.jsonl"].split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            let tree: TicketTree = serde_json::from_slice(line).map_err(|e| bad("trees.jsonl", e.to_string()))?;
            trees.insert(tree.ticket_id.clone(), tree);
        }
        let mut edges = Vec::new();
        for line in data["edges.jsonl"].split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            let edge: InterTicketEdge = serde_json::from_slice(line).map_err(|e| bad("edges.jsonl", e.to_string()))?;
            edges.push(edge);
        }
        let mut chunks = Vec::new();
        for line in data["baseline_chunks.jsonl"].split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            let chunk: BaselineChunk =
                serde_json::from_slice(line).map_err(|e| bad("baseline_chunks.jsonl", e.to_string()))?;
            chunks.push(chunk);
        }
        let index = decode_vectors(&data["index.bin"]).map_err(|e| bad("index.bin", e))?;
        let baseline_vectors = decode_vectors(&data["baseline.bin"]).map_err(|e| bad("baseline.bin", e))?;

        let fp = &manifest.build_params.embedder_fingerprint;
        for (file, found) in [("index.bin", index.fingerprint()), ("baseline.bin", baseline_vectors.fingerprint())] {
            if found != fp {
                return Err(Error::FingerprintMismatch {
                    expected: fp.clone(),
                    found: format!("{found} ({file})"),
                });
            }
        }
        let baseline_chunking = ChunkParams::new(manifest.baseline_chunking.max_units(), manifest.baseline_chunking.overlap())?;
        ChunkParams::new(manifest.chunking.max_units(), manifest.chunking.overlap())?;
        let baseline = BaselineIndex::from_parts(baseline_chunking, baseline_vectors, chunks)?;
        let graph = KnowledgeGraph::new(template, trees, edges, manifest.build_params.clone());
        Ok(Snapshot {
            manifest,
            graph,
            index,
            baseline,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use crate::model::validate_graph;

    fn tickets() -> Vec<RawTicket> {
        vec![
            RawTicket::new("A-1", "export stalls", "Description: the export stalls at 99 percent.\nPriority: Major")
                .with_link("clone", "B-2"),
            RawTicket::new("B-2", "export stalls forever", "Fix Solution: raise the worker timeout."),
        ]
    }

    fn build() -> Snapshot {
        let e = HashEmbedder::default();
        Snapshot::build(&tickets(), &GraphTemplate::standard(), None, &e, &SnapshotConfig::default()).unwrap().0
    }

    fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect()
    }

    #[test]
    fn save_load_round_trip_is_byte_stable() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        let mut snap = build();
        snap.save(&a).unwrap();
        let mut loaded = Snapshot::load(&a).unwrap();
        assert!(validate_graph(&loaded.graph).is_empty());
        assert_eq!(loaded.graph.trees, snap.graph.trees);
        assert_eq!(loaded.graph.edges, snap.graph.edges);
        assert_eq!(loaded.index.entries(), snap.index.entries());
        loaded.save(&b).unwrap();
        assert_eq!(dir_bytes(&a), dir_bytes(&b));
        assert_eq!(loaded.id(), snap.id());
    }

    #[test]
    fn rebuild_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        build().save(&tmp.path().join("x")).unwrap();
        build().save(&tmp.path().join("y")).unwrap();
        assert_eq!(dir_bytes(&tmp.path().join("x")), dir_bytes(&tmp.path().join("y")));
    }

    #[test]
    fn overwrite_replaces_atomically() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("snap");
        build().save(&dir).unwrap();
        build().save(&dir).unwrap();
        assert!(Snapshot::load(&dir).is_ok());
        let leftovers: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn missing_and_tampered_snapshots() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(Snapshot::load(&tmp.path().join("none")), Err(Error::NoSnapshot(_))));
        let dir = tmp.path().join("snap");
        build().save(&dir).unwrap();
        let edges = dir.join("edges.jsonl");
        let mut text = fs::read_to_string(&edges).unwrap();
        text.push_str("{}\n");
        fs::write(&edges, text).unwrap();
        assert!(matches!(Snapshot::load(&dir), Err(Error::Snapshot { .. })));
    }

    #[test]
    fn vector_codec_rejects_garbage() {
        let snap = build();
        let bytes = encode_vectors(&snap.index);
        assert_eq!(decode_vectors(&bytes).unwrap().entries(), snap.index.entries());
        assert!(decode_vectors(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_vectors(b"XXXX").is_err());
    }
}
