//! Adapter for an external text-completion endpoint.
//!
//! Wire format, one POST per generate call:
//!
//! ```text
//! request:  {"prompt": "<system prompt>\n<prompt text>", "n": G, "max_tokens": N}
//! response: {"completions": ["...", ...]}
//! ```
//!
//! The configured system prompt (which mandates the structured-output
//! micro-syntax) is prepended to every prompt. Completions carry no
//! log-likelihoods, so this backend is evaluation-only and excluded from
//! likelihood-based training. Timeouts, non-2xx statuses, and malformed
//! bodies surface as distinct errors, with `retry_count` extra attempts on
//! timeouts, connection failures, and 5xx statuses.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{PolicyBackend, PolicyError, Sample};
use crate::encode::{Prompt, Vocab};

/// Endpoint configuration; `COTPLANE_ENDPOINT` overrides the URL at runtime.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalModelConfig {
    pub endpoint: String,
    pub timeout_secs: f64,
    pub system_prompt: String,
    pub retry_count: u32,
    pub max_tokens: u32,
}

impl Default for ExternalModelConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/complete".into(),
            timeout_secs: 10.0,
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            retry_count: 2,
            max_tokens: 1024,
        }
    }
}

const DEFAULT_SYSTEM_PROMPT: &str = "You are a cluster operator. Answer with exactly \
four tag pairs: <think>...</think> <Fault>...</Fault> <Counterfactual>...</Counterfactual> \
<root>...</root>. Inside <Fault> and <root> list faulty services as #id @P pairs \
(P one of C D M N) or NONE. Inside <Counterfactual> write one claim per line as \
IF <SCALE_OUT|SCALE_IN|CPU_UP|CPU_DOWN|MEM_UP|MEM_DOWN> #id [amount] THEN \
<IMPROVED|NEUTRAL|DEGRADED>, or NONE.";

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    n: usize,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    completions: Vec<String>,
}

/// Blocking HTTP policy backend.
pub struct HttpPolicy {
    cfg: ExternalModelConfig,
    vocab: Vocab,
    agent: ureq::Agent,
}

impl HttpPolicy {
    pub fn new(mut cfg: ExternalModelConfig, vocab: Vocab) -> Self {
        if let Ok(endpoint) = std::env::var("COTPLANE_ENDPOINT") {
            if !endpoint.is_empty() {
                cfg.endpoint = endpoint;
            }
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .build()
            .into();
        Self { cfg, vocab, agent }
    }

    pub fn config(&self) -> &ExternalModelConfig {
        &self.cfg
    }

    fn attempt(&self, body: &CompletionRequest<'_>) -> Result<Vec<String>, PolicyError> {
        let response = self.agent.post(&self.cfg.endpoint).send_json(body);
        match response {
            Ok(mut resp) => {
                let parsed: CompletionResponse = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| PolicyError::MalformedBody(e.to_string()))?;
                if parsed.completions.is_empty() {
                    return Err(PolicyError::MalformedBody("empty completions array".into()));
                }
                Ok(parsed.completions)
            }
            Err(ureq::Error::StatusCode(code)) => Err(PolicyError::Status(code)),
            Err(ureq::Error::Timeout(_)) => Err(PolicyError::Timeout { attempts: 1 }),
            Err(ureq::Error::Io(e)) => Err(PolicyError::Connection(e.to_string())),
            Err(other) => Err(PolicyError::Connection(other.to_string())),
        }
    }

    fn retryable(err: &PolicyError) -> bool {
        matches!(
            err,
            PolicyError::Timeout { .. } | PolicyError::Connection(_) | PolicyError::Status(500..=599)
        )
    }
}

impl PolicyBackend for HttpPolicy {
    fn name(&self) -> &'static str {
        "http"
    }

    fn generate(&self, prompt: &Prompt, g: usize, _seed: u64) -> Result<Vec<Sample>, PolicyError> {
        assert!(g >= 1);
        let full_prompt = format!("{}\n{}", self.cfg.system_prompt, prompt.text);
        let body = CompletionRequest { prompt: &full_prompt, n: g, max_tokens: self.cfg.max_tokens };
        let attempts = 1 + self.cfg.retry_count;
        let mut last_err = PolicyError::Connection("no attempt made".into());
        for _ in 0..attempts {
            match self.attempt(&body) {
                Ok(completions) => {
                    return Ok(completions
                        .into_iter()
                        .map(|text| {
                            let tokens = self.vocab.tokenize_lossy(&text);
                            Sample { tokens, text, logp: None }
                        })
                        .collect());
                }
                Err(err) => {
                    let retry = Self::retryable(&err);
                    last_err = err;
                    if !retry {
                        break;
                    }
                }
            }
        }
        if let PolicyError::Timeout { .. } = last_err {
            last_err = PolicyError::Timeout { attempts };
        }
        Err(last_err)
    }
}
