//! Service settings: one TOML file, overridden per key by `TICKETGRAPH_*`
//! environment variables.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ticketgraph::{
    AdapterHandle, ChunkAggregation, ChunkParams, Embedder, EngineConfig, GraphBuildConfig, GraphTemplate, HashEmbedder,
    SnapshotConfig, StubAdapter,
};

use crate::remote::HttpAdapter;

pub const ENV_PREFIX: &str = "TICKETGRAPH_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    /// No adapter; every generative step takes its deterministic path.
    None,
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub snapshot_dir: PathBuf,
    /// JSON template file; the built-in template when unset.
    pub template: Option<PathBuf>,
    pub theta: f64,
    pub implicit_cap: Option<usize>,
    pub embedding_dimension: usize,
    pub chunk_tokens: usize,
    pub chunk_overlap: usize,
    pub baseline_chunk_tokens: usize,
    pub baseline_chunk_overlap: usize,
    pub k_ticket: usize,
    pub anchors: usize,
    pub aggregation: ChunkAggregation,
    pub adapter: AdapterMode,
    pub adapter_url: Option<String>,
    pub adapter_deadline_ms: u64,
    pub adapter_retries: u32,
    pub listen: String,
    /// Bearer token required on every route except health when set.
    pub api_token: Option<String>,
}

impl Default for Settings {
    fn default() -> Self {
        let graph = GraphBuildConfig::default();
        let engine = EngineConfig::default();
        Self {
            snapshot_dir: PathBuf::from("snapshot"),
            template: None,
            theta: graph.theta,
            implicit_cap: graph.implicit_cap,
            embedding_dimension: HashEmbedder::default().dimension(),
            chunk_tokens: graph.chunking.max_units(),
            chunk_overlap: graph.chunking.overlap(),
            baseline_chunk_tokens: graph.chunking.max_units(),
            baseline_chunk_overlap: graph.chunking.overlap(),
            k_ticket: engine.k_ticket,
            anchors: engine.anchors,
            aggregation: engine.aggregation,
            adapter: AdapterMode::Stub,
            adapter_url: None,
            adapter_deadline_ms: 10_000,
            adapter_retries: 2,
            listen: "127.0.0.1:8080".into(),
            api_token: None,
        }
    }
}

const KEYS: &[&str] = &[
    "snapshot_dir",
    "template",
    "theta",
    "implicit_cap",
    "embedding_dimension",
    "chunk_tokens",
    "chunk_overlap",
    "baseline_chunk_tokens",
    "baseline_chunk_overlap",
    "k_ticket",
    "anchors",
    "aggregation",
    "adapter",
    "adapter_url",
    "adapter_deadline_ms",
    "adapter_retries",
    "listen",
    "api_token",
];

/// Settings whose environment values are taken verbatim.
const STRING_KEYS: &[&str] = &["snapshot_dir", "template", "aggregation", "adapter", "adapter_url", "listen", "api_token"];

/// Numeric settings read an environment value as a TOML scalar, so `0.8`
/// and `3` work unquoted; a value that does not parse stays a string and
/// fails type checking with a clear message.
fn env_value(key: &str, raw: &str) -> toml::Value {
    if STRING_KEYS.contains(&key) {
        return toml::Value::String(raw.to_string());
    }
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => match t.remove("v") {
            Some(v @ (toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_))) => v,
            _ => toml::Value::String(raw.to_string()),
        },
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl Settings {
    /// Reads `path` (if given) and applies overrides from `env`.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("malformed config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for (name, raw) in env {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = key.to_ascii_lowercase();
            if !KEYS.contains(&key.as_str()) {
                // CONFIG is the file path itself, not a setting
                if key != "config" {
                    tracing::warn!("ignoring unknown environment setting {name}");
                }
                continue;
            }
            let value = env_value(&key, &raw);
            table.insert(key, value);
        }
        let settings: Settings = table.try_into().context("invalid settings")?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn from_env(path: Option<&Path>) -> Result<Self> {
        Self::load(path, std::env::vars())
    }

    fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && (-1.0..=1.0).contains(&self.theta)) {
            bail!("theta must lie in [-1, 1], got {}", self.theta);
        }
        if self.k_ticket == 0 || self.anchors == 0 {
            bail!("k_ticket and anchors must be at least 1");
        }
        if self.adapter == AdapterMode::Remote && self.adapter_url.as_deref().is_none_or(str::is_empty) {
            bail!("adapter = \"remote\" needs adapter_url");
        }
        if self.adapter_deadline_ms == 0 {
            bail!("adapter_deadline_ms must be positive");
        }
        self.snapshot_config()?;
        self.embedder()?;
        Ok(())
    }

    pub fn template(&self) -> Result<GraphTemplate> {
        match &self.template {
            None => Ok(GraphTemplate::standard()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read template {}", p.display()))?;
                Ok(GraphTemplate::from_json(&text)?)
            }
        }
    }

    pub fn embedder(&self) -> Result<HashEmbedder> {
        Ok(HashEmbedder::new(self.embedding_dimension)?)
    }

    pub fn snapshot_config(&self) -> Result<SnapshotConfig> {
        Ok(SnapshotConfig {
            graph: GraphBuildConfig {
                theta: self.theta,
                implicit_cap: self.implicit_cap,
                chunking: ChunkParams::new(self.chunk_tokens, self.chunk_overlap)?,
            },
            baseline_chunking: ChunkParams::new(self.baseline_chunk_tokens, self.baseline_chunk_overlap)?,
        })
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            k_ticket: self.k_ticket,
            anchors: self.anchors,
            aggregation: self.aggregation,
        }
    }

    pub fn adapter(&self, template: &GraphTemplate) -> Result<Option<AdapterHandle>> {
        let deadline = Duration::from_millis(self.adapter_deadline_ms);
        Ok(match self.adapter {
            AdapterMode::None => None,
            AdapterMode::Stub => Some(AdapterHandle::new(Arc::new(StubAdapter::new(template.clone())), deadline)),
            AdapterMode::Remote => {
                let url = self.adapter_url.clone().unwrap_or_default();
                Some(AdapterHandle::new(Arc::new(HttpAdapter::new(url, self.adapter_retries)?), deadline))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tg.toml");
        std::fs::write(&path, "theta = 0.6\nk_ticket = 5\nadapter = \"none\"\n").unwrap();
        let s = Settings::load(Some(&path), env(&[("TICKETGRAPH_THETA", "0.8"), ("HOME", "/x")])).unwrap();
        assert_eq!(s.theta, 0.8);
        assert_eq!(s.k_ticket, 5);
        assert_eq!(s.adapter, AdapterMode::None);
        assert_eq!(s.chunk_tokens, 256);

        let s = Settings::load(None, env(&[("TICKETGRAPH_LISTEN", "0.0.0.0:9000"), ("TICKETGRAPH_API_TOKEN", "1234")]))
            .unwrap();
        assert_eq!(s.listen, "0.0.0.0:9000");
        assert_eq!(s.api_token.as_deref(), Some("1234"));
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tg.toml");
        std::fs::write(&path, "theta = [").unwrap();
        assert!(Settings::load(Some(&path), vec![]).is_err());
        std::fs::write(&path, "thetaa = 0.5").unwrap();
        assert!(Settings::load(Some(&path), vec![]).is_err());
        assert!(Settings::load(None, env(&[("TICKETGRAPH_CHUNK_OVERLAP", "300")])).is_err());
        assert!(Settings::load(None, env(&[("TICKETGRAPH_ADAPTER", "remote")])).is_err());
        assert!(Settings::load(None, env(&[("TICKETGRAPH_THETA", "high")])).is_err());
        assert!(Settings::load(Some(Path::new("/nonexistent/tg.toml")), vec![]).is_err());
    }
}
