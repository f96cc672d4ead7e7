//! Text-generation adapter contract.
//!
//! Every generative step of the pipeline (ticket parsing, query parsing,
//! plan formulation, answer composition) goes through this trait. Adapters
//! may be remote and slow; each call carries a deadline, and a late answer is
//! reported as a timeout so callers can fall back to their deterministic path.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::GraphTemplate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationTask {
    ParseTicket,
    ParseQuery,
    PlanQuery,
    ComposeAnswer,
}

/// Wire form of one generation call. `context` carries the structured inputs
/// the prompt was rendered from, so adapters can use either.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub task: GenerationTask,
    pub prompt: String,
    pub context: serde_json::Value,
    pub deadline_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("adapter deadline of {0:?} exceeded")]
    Timeout(Duration),
    #[error("adapter unavailable: {0}")]
    Unavailable(String),
    #[error("malformed adapter output: {0}")]
    Malformed(String),
}

pub trait TextGenerationAdapter: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, request: &GenerationRequest) -> Result<String, AdapterError>;

    /// Adapters that cannot be called concurrently return `true`; the engine
    /// then serializes calls.
    fn single_flight(&self) -> bool {
        false
    }
}

/// Shared handle that enforces the deadline and single-flight contract.
#[derive(Clone)]
pub struct AdapterHandle {
    inner: Arc<dyn TextGenerationAdapter>,
    gate: Option<Arc<Mutex<()>>>,
    deadline: Duration,
}

impl std::fmt::Debug for AdapterHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterHandle")
            .field("adapter", &self.inner.name())
            .field("single_flight", &self.gate.is_some())
            .field("deadline", &self.deadline)
            .finish()
    }
}

impl AdapterHandle {
    pub fn new(adapter: Arc<dyn TextGenerationAdapter>, deadline: Duration) -> Self {
        let gate = adapter.single_flight().then(|| Arc::new(Mutex::new(())));
        Self {
            inner: adapter,
            gate,
            deadline,
        }
    }

    pub fn name(&self) -> &str {
        self.inner.name()
    }

    pub fn deadline(&self) -> Duration {
        self.deadline
    }

    pub fn call(
        &self,
        task: GenerationTask,
        prompt: String,
        context: serde_json::Value,
    ) -> Result<String, AdapterError> {
        let request = GenerationRequest {
            task,
            prompt,
            context,
            deadline_ms: self.deadline.as_millis().try_into().unwrap_or(u64::MAX),
        };
        let started = Instant::now();
        let result = match &self.gate {
            Some(gate) => {
                let _guard = gate.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
                if started.elapsed() > self.deadline {
                    return Err(AdapterError::Timeout(self.deadline));
                }
                self.inner.generate(&request)
            }
            None => self.inner.generate(&request),
        };
        if started.elapsed() > self.deadline {
            return Err(AdapterError::Timeout(self.deadline));
        }
        result
    }
}

/// Pulls the outermost JSON object out of adapter text, tolerating code
/// fences and surrounding prose.
pub fn extract_json_object(text: &str) -> Result<serde_json::Value, AdapterError> {
    let start = text
        .find('{')
        .ok_or_else(|| AdapterError::Malformed("no JSON object in output".into()))?;
    let end = text
        .rfind('}')
        .filter(|&end| end > start)
        .ok_or_else(|| AdapterError::Malformed("unterminated JSON object".into()))?;
    let value: serde_json::Value = serde_json::from_str(&text[start..=end])
        .map_err(|e| AdapterError::Malformed(e.to_string()))?;
    if !value.is_object() {
        return Err(AdapterError::Malformed("expected a JSON object".into()));
    }
    Ok(value)
}

/// Deterministic offline adapter. It answers every task with the same
/// rule-based algorithms the pipeline falls back to, but round-trips them
/// through the adapter wire format so the validation paths are exercised.
#[derive(Debug, Clone)]
pub struct StubAdapter {
    template: GraphTemplate,
}

impl StubAdapter {
    pub fn new(template: GraphTemplate) -> Self {
        Self { template }
    }
}

impl TextGenerationAdapter for StubAdapter {
    fn name(&self) -> &str {
        "stub"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, AdapterError> {
        let ctx = &request.context;
        let field = |name: &str| -> Result<&str, AdapterError> {
            ctx.get(name)
                .and_then(|v| v.as_str())
                .ok_or_else(|| AdapterError::Malformed(format!("context lacks {name}")))
        };
        let out = match request.task {
            GenerationTask::ParseTicket => {
                let sections = crate::parser::segment_by_headings(field("text")?, &self.template);
                serde_json::to_value(sections)
            }
            GenerationTask::ParseQuery => {
                let parse = crate::query::parse::lexicon_parse(field("query")?, &self.template)
                    .map_err(|e| AdapterError::Malformed(e.to_string()))?;
                Ok(serde_json::json!({
                    "entities": parse.entities,
                    "intents": parse.intents,
                }))
            }
            GenerationTask::PlanQuery => {
                let intents: Vec<String> = ctx
                    .get("intents")
                    .and_then(|v| serde_json::from_value(v.clone()).ok())
                    .ok_or_else(|| AdapterError::Malformed("context lacks intents".into()))?;
                let traversals = crate::query::plan::deterministic_traversals(&intents, &self.template);
                serde_json::to_value(serde_json::json!({ "traversals": traversals }))
            }
            GenerationTask::ComposeAnswer => {
                let rows: Vec<crate::query::plan::PlanRow> = ctx
                    .get("rows")
                    .and_then(|v| serde_json::from_value(v.clone()).ok())
                    .ok_or_else(|| AdapterError::Malformed("context lacks rows".into()))?;
                return Ok(crate::query::engine::template_compose(&rows));
            }
        };
        out.map(|v| v.to_string())
            .map_err(|e| AdapterError::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Slow(Duration);

    impl TextGenerationAdapter for Slow {
        fn name(&self) -> &str {
            "slow"
        }
        fn generate(&self, _: &GenerationRequest) -> Result<String, AdapterError> {
            std::thread::sleep(self.0);
            Ok("{}".into())
        }
    }

    struct Exclusive {
        active: AtomicUsize,
        max_seen: AtomicUsize,
    }

    impl TextGenerationAdapter for Exclusive {
        fn name(&self) -> &str {
            "exclusive"
        }
        fn generate(&self, _: &GenerationRequest) -> Result<String, AdapterError> {
            let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
            self.max_seen.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(2));
            self.active.fetch_sub(1, Ordering::SeqCst);
            Ok("ok".into())
        }
        fn single_flight(&self) -> bool {
            true
        }
    }

    #[test]
    fn late_response_is_a_timeout() {
        let handle = AdapterHandle::new(Arc::new(Slow(Duration::from_millis(30))), Duration::from_millis(5));
        let err = handle
            .call(GenerationTask::ParseQuery, String::new(), serde_json::Value::Null)
            .unwrap_err();
        assert!(matches!(err, AdapterError::Timeout(_)));
    }

    #[test]
    fn single_flight_adapters_are_serialized() {
        let adapter = Arc::new(Exclusive {
            active: AtomicUsize::new(0),
            max_seen: AtomicUsize::new(0),
        });
        let handle = AdapterHandle::new(adapter.clone(), Duration::from_secs(10));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let h = handle.clone();
                s.spawn(move || {
                    h.call(GenerationTask::ComposeAnswer, String::new(), serde_json::Value::Null)
                        .unwrap()
                });
            }
        });
        assert_eq!(adapter.max_seen.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn json_extraction_tolerates_fences() {
        let v = extract_json_object("```json\n{\"a\": \"b\"}\n```").unwrap();
        assert_eq!(v["a"], "b");
        assert!(extract_json_object("no json here").is_err());
        assert!(extract_json_object("{not json}").is_err());
    }
}
