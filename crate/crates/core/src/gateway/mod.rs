//! The one boundary to remote models.
//!
//! Every call renders a versioned template, sends it, and hands the raw reply
//! to a caller-supplied validator. Invalid replies are retried with a
//! corrective note appended to the conversation until the retry budget runs
//! out. Every attempt lands in the audit sink, whatever its fate.

mod audit;
pub mod templates;
mod transport;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{ActionStatus, Trajectory};

pub use audit::{AuditEntry, AuditSink, FileAudit, MemoryAudit, NullAudit};
pub use templates::{builtin as builtin_template, render, slots};
pub use transport::{CannedTransport, HttpTransport, Message, ModelRequest, ModelTransport, TransportFailure};

pub const DEFAULT_API_KEY_ENV: &str = "SKILLSPIRAL_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    pub retry_budget: u32,
    pub max_output_tokens: u32,
    /// Sampling temperature for executor calls.
    pub temperature: f64,
    /// Pinned temperature for reflection, consolidation and revision calls.
    pub revision_temperature: f64,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "local-model".into(),
            timeout_secs: 60.0,
            retry_budget: 3,
            max_output_tokens: 1024,
            temperature: 0.0,
            revision_temperature: 0.0,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            max_in_flight: 4,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err("timeout_secs must be positive".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        Ok(())
    }
}

/// Which call site is asking; decides the sampling temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallSite {
    Executor,
    Reflection,
    Consolidation,
    BodyRevision,
    AppendixUpdate,
    Rewrite,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template slot {0:?} has no value")]
    MissingSlot(String),
    #[error("no valid response after {attempts} attempts; last problem: {last_problem}")]
    ExhaustedRetries { attempts: u32, last_problem: String },
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("model call timed out")]
    Timeout,
}

const CORRECTIVE: &str = "Your previous reply was rejected";

struct Slots {
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Slots);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    config: GatewayConfig,
    transport: Box<dyn ModelTransport>,
    audit: Arc<dyn AuditSink>,
    overrides: BTreeMap<String, String>,
    slots: Slots,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(config: GatewayConfig, transport: Box<dyn ModelTransport>, audit: Arc<dyn AuditSink>) -> Self {
        Self {
            config,
            transport,
            audit,
            overrides: BTreeMap::new(),
            slots: Slots {
                used: Mutex::new(0),
                freed: Condvar::new(),
            },
            calls: AtomicU64::new(0),
        }
    }

    /// HTTP transport per `config`.
    pub fn http(config: GatewayConfig, audit: Arc<dyn AuditSink>) -> Self {
        let transport = HttpTransport::new(config.endpoint.clone(), config.api_key_env.clone());
        Self::new(config, Box::new(transport), audit)
    }

    /// Replaces or adds a template under `id`.
    pub fn with_template(mut self, id: impl Into<String>, text: impl Into<String>) -> Self {
        self.overrides.insert(id.into(), text.into());
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn template(&self, id: &str) -> Result<&str, GatewayError> {
        self.overrides
            .get(id)
            .map(String::as_str)
            .or_else(|| builtin_template(id))
            .ok_or_else(|| GatewayError::UnknownTemplate(id.to_string()))
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.slots.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.config.max_in_flight {
            used = self.slots.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(&self.slots)
    }

    /// Renders `template_id`, calls the model and returns the first reply
    /// `validate` accepts.
    pub fn complete_structured<T>(
        &self,
        site: CallSite,
        template_id: &str,
        vars: &BTreeMap<&str, String>,
        validate: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, GatewayError> {
        let prompt = render(self.template(template_id)?, vars)?;
        let call_id = self.calls.fetch_add(1, Ordering::SeqCst);
        let temperature = match site {
            CallSite::Executor => self.config.temperature,
            _ => self.config.revision_temperature,
        };
        let mut request = ModelRequest {
            model: self.config.model.clone(),
            messages: vec![Message::user(prompt)],
            temperature,
            max_tokens: self.config.max_output_tokens,
            timeout: Duration::from_secs_f64(self.config.timeout_secs),
        };
        let attempts = self.config.retry_budget + 1;
        let mut last_problem = String::new();
        for attempt in 1..=attempts {
            let prompt_log = serde_json::to_string(&request.messages).expect("messages serialize");
            let record = |response: Option<&str>, verdict: String| {
                self.audit.record(&AuditEntry {
                    call_id,
                    template_id: template_id.to_string(),
                    attempt,
                    prompt: prompt_log.clone(),
                    response: response.map(str::to_string),
                    verdict,
                })
            };
            let reply = {
                let _permit = self.acquire();
                self.transport.complete(&request)
            };
            let raw = match reply {
                Ok(raw) => raw,
                Err(TransportFailure::Timeout) => {
                    record(None, "timeout".into());
                    return Err(GatewayError::Timeout);
                }
                Err(TransportFailure::Failed(e)) => {
                    record(None, format!("transport error: {e}"));
                    return Err(GatewayError::TransportError(e));
                }
            };
            match validate(&raw) {
                Ok(value) => {
                    record(Some(&raw), "accepted".into());
                    return Ok(value);
                }
                Err(problem) => {
                    record(Some(&raw), format!("invalid: {problem}"));
                    request.messages.push(Message::assistant(raw));
                    request.messages.push(Message::user(format!(
                        "{CORRECTIVE}: {problem}. Reply again, following the required format exactly."
                    )));
                    last_problem = problem;
                }
            }
        }
        Err(GatewayError::ExhaustedRetries {
            attempts,
            last_problem,
        })
    }
}

/// Steps kept in prompt excerpts: the last 20 plus every rejected step.
pub const EXCERPT_TAIL: usize = 20;

pub fn excerpt(traj: &Trajectory) -> String {
    let tail_from = traj.steps.len().saturating_sub(EXCERPT_TAIL);
    traj.steps
        .iter()
        .enumerate()
        .filter(|(i, s)| *i >= tail_from || s.action_status == ActionStatus::RejectedByEnv)
        .map(|(_, s)| {
            let status = match s.action_status {
                ActionStatus::Accepted => "accepted",
                ActionStatus::RejectedByEnv => "rejected",
            };
            format!("{} | {} | {} | {}", s.index, s.action, status, s.observation.replace('\n', " "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Strips a surrounding markdown code fence, if any.
pub fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(inner) = t.strip_prefix("```") else {
        return t;
    };
    let inner = inner.split_once('\n').map_or("", |(_, rest)| rest);
    inner.trim_end().strip_suffix("```").unwrap_or(inner).trim()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gateway(transport: CannedTransport, audit: Arc<MemoryAudit>) -> Gateway {
        Gateway::new(GatewayConfig::default(), Box::new(transport), audit)
            .with_template("t", "say {{what}}")
    }

    fn number(raw: &str) -> Result<u32, String> {
        raw.trim().parse().map_err(|_| format!("{raw:?} is not a number"))
    }

    fn vars() -> BTreeMap<&'static str, String> {
        BTreeMap::from([("what", "a number".to_string())])
    }

    #[test]
    fn valid_reply_passes_through() {
        let audit = Arc::new(MemoryAudit::new());
        let g = gateway(CannedTransport::replies(["42"]), audit.clone());
        assert_eq!(g.complete_structured(CallSite::Reflection, "t", &vars(), number), Ok(42));
        assert_eq!(audit.entries().len(), 1);
    }

    #[test]
    fn two_bad_replies_then_good() {
        let audit = Arc::new(MemoryAudit::new());
        let g = gateway(CannedTransport::replies(["nope", "{", "7"]), audit.clone());
        assert_eq!(g.complete_structured(CallSite::Reflection, "t", &vars(), number), Ok(7));
        let entries = audit.entries();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[2].verdict, "accepted");
        assert!(entries[1].prompt.contains(CORRECTIVE));
    }

    #[test]
    fn always_malformed_exhausts_after_four() {
        let audit = Arc::new(MemoryAudit::new());
        let g = gateway(CannedTransport::replies(["bad"]), audit.clone());
        let err = g.complete_structured(CallSite::Reflection, "t", &vars(), number).unwrap_err();
        assert!(matches!(err, GatewayError::ExhaustedRetries { attempts: 4, .. }));
        assert_eq!(audit.entries().len(), 4);
    }

    #[test]
    fn transport_failures_are_audited() {
        let audit = Arc::new(MemoryAudit::new());
        let g = gateway(CannedTransport::new([Err(TransportFailure::Timeout)]), audit.clone());
        assert_eq!(
            g.complete_structured(CallSite::Executor, "t", &vars(), number),
            Err(GatewayError::Timeout)
        );
        assert_eq!(audit.entries()[0].verdict, "timeout");
    }

    #[test]
    fn fences_are_stripped() {
        assert_eq!(strip_fence("```json\n[1]\n```"), "[1]");
        assert_eq!(strip_fence("  [1] "), "[1]");
    }
}
