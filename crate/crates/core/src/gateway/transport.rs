use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip)]
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    Timeout,
    Failed(String),
}

/// One request/response exchange with a model endpoint.
pub trait ModelTransport: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<String, TransportFailure>;
}

/// Chat-completions style HTTP endpoint. The bearer token is read from an
/// environment variable at call time and never stored or logged.
pub struct HttpTransport {
    endpoint: String,
    api_key_env: String,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key_env: api_key_env.into(),
        }
    }
}

impl ModelTransport for HttpTransport {
    fn complete(&self, request: &ModelRequest) -> Result<String, TransportFailure> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(request.timeout))
            .build()
            .into();
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut call = agent.post(&self.endpoint);
        if let Ok(key) = std::env::var(&self.api_key_env) {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportFailure::Timeout,
            other => TransportFailure::Failed(other.to_string()),
        };
        let mut response = call.send_json(&body).map_err(map_err)?;
        let value: serde_json::Value = response.body_mut().read_json().map_err(map_err)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportFailure::Failed("response has no choices[0].message.content".into()))
    }
}

/// Test double replaying canned responses in order; repeats the last one
/// when the script runs out.
pub struct CannedTransport {
    script: Mutex<VecDeque<Result<String, TransportFailure>>>,
    last: Mutex<Option<Result<String, TransportFailure>>>,
    seen: Mutex<Vec<ModelRequest>>,
}

impl CannedTransport {
    pub fn new(script: impl IntoIterator<Item = Result<String, TransportFailure>>) -> Self {
        Self {
            script: Mutex::new(script.into_iter().collect()),
            last: Mutex::new(None),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|s| Ok(s.into())))
    }

    /// Requests received so far.
    pub fn requests(&self) -> Vec<ModelRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ModelTransport for CannedTransport {
    fn complete(&self, request: &ModelRequest) -> Result<String, TransportFailure> {
        self.seen.lock().unwrap().push(request.clone());
        let next = self.script.lock().unwrap().pop_front();
        let mut last = self.last.lock().unwrap();
        match next {
            Some(r) => {
                *last = Some(r.clone());
                r
            }
            None => last
                .clone()
                .unwrap_or_else(|| Err(TransportFailure::Failed("no scripted response".into()))),
        }
    }
}
