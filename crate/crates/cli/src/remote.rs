//! Generation adapter that forwards each request to an HTTP endpoint.
//!
//! The endpoint receives the request as JSON (`task`, `prompt`, `context`,
//! `deadline_ms`) and answers `{"text": "..."}`.

use std::thread;
use std::time::{Duration, Instant};

use ticketgraph::adapter::{GenerationRequest, GenerationResponse};
use ticketgraph::{AdapterError, TextGenerationAdapter};

const FIRST_BACKOFF: Duration = Duration::from_millis(50);

pub struct HttpAdapter {
    url: String,
    retries: u32,
    client: reqwest::blocking::Client,
}

impl HttpAdapter {
    pub fn new(url: String, retries: u32) -> anyhow::Result<Self> {
        let client = reqwest::blocking::Client::builder().build()?;
        Ok(Self { url, retries, client })
    }

    fn attempt(&self, request: &GenerationRequest, timeout: Duration) -> Result<String, (bool, AdapterError)> {
        let response = self
            .client
            .post(&self.url)
            .timeout(timeout)
            .json(request)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    (false, AdapterError::Timeout(timeout))
                } else {
                    (true, AdapterError::Unavailable(e.to_string()))
                }
            })?;
        let status = response.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err((true, AdapterError::Unavailable(format!("{} answered {status}", self.url))));
        }
        if !status.is_success() {
            return Err((false, AdapterError::Unavailable(format!("{} answered {status}", self.url))));
        }
        let body: GenerationResponse =
            response.json().map_err(|e| (false, AdapterError::Malformed(e.to_string())))?;
        Ok(body.text)
    }
}

impl TextGenerationAdapter for HttpAdapter {
    fn name(&self) -> &str {
        "remote"
    }

    /// Retries connection failures, 429 and 5xx answers with doubling backoff
    /// while the request deadline allows.
    fn generate(&self, request: &GenerationRequest) -> Result<String, AdapterError> {
        let deadline = Duration::from_millis(request.deadline_ms);
        let started = Instant::now();
        let mut backoff = FIRST_BACKOFF;
        let mut attempt = 0;
        loop {
            let remaining = deadline.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                return Err(AdapterError::Timeout(deadline));
            }
            match self.attempt(request, remaining) {
                Ok(text) => return Ok(text),
                Err((retryable, err)) => {
                    if !retryable || attempt >= self.retries || started.elapsed() + backoff >= deadline {
                        return Err(err);
                    }
                    tracing::debug!(attempt, %err, "retrying adapter call");
                    thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
            }
        }
    }
}
