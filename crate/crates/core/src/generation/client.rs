//! Minimal chat-completion client with a digest-keyed response cache and a mock mode.
//!
//! Wire contract: `POST {endpoint}` with
//! `{"model", "messages": [{"role": "user", "content"}], "temperature", "max_tokens"}`;
//! the assistant text is `choices[0].message.content`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("no mock fixture for digest {digest} (expected {path})")]
    MockMiss { digest: String, path: PathBuf },
    #[error("cache I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("API key variable `{0}` is not set")]
    MissingKey(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatBody {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug)]
pub enum TransportError {
    /// Connection-level failure; retried.
    Io(String),
    Status { status: u16, body: String },
    Response(String),
}

/// Sends one chat request and returns the assistant text.
pub trait Transport: Send + Sync {
    fn complete(&self, body: &ChatBody) -> Result<String, TransportError>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpTransport {
            agent: ureq::Agent::new_with_config(config),
            endpoint: endpoint.to_string(),
            api_key,
        }
    }
}

impl Transport for HttpTransport {
    fn complete(&self, body: &ChatBody) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| TransportError::Io(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Io(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body: text });
        }
        assistant_text(&text).map_err(TransportError::Response)
    }
}

/// Extracts `choices[0].message.content` from a response body.
pub fn assistant_text(body: &str) -> Result<String, String> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| "missing choices[0].message.content".to_string())
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub model: String,
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub retries: u32,
    pub timeout: Duration,
    pub max_in_flight: usize,
    /// When set, responses come from `<dir>/<digest>.txt` and nothing touches the network.
    pub mock_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            model: "gpt-3.5-turbo".into(),
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            retries: 2,
            timeout: Duration::from_secs(60),
            max_in_flight: 4,
            mock_dir: None,
            cache_dir: None,
        }
    }
}

/// Cache/mock key: SHA-256 over the model name and the sampling-relevant request fields.
pub fn request_digest(model: &str, req: &GenerationRequest) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        model: &'a str,
        prompt: &'a str,
        temperature: f64,
        max_tokens: u32,
    }
    let key = serde_json::to_vec(&Key {
        model,
        prompt: &req.prompt,
        temperature: req.temperature,
        max_tokens: req.max_output_tokens,
    })
    .expect("plain struct serializes");
    hex::encode(Sha256::digest(&key))
}

/// Writes `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub network_calls: usize,
    pub cache_hits: usize,
    pub mock_hits: usize,
}

pub struct ChatClient {
    config: ClientConfig,
    transport: Option<Box<dyn Transport>>,
    missing_key: Option<String>,
    network_calls: AtomicUsize,
    cache_hits: AtomicUsize,
    mock_hits: AtomicUsize,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("config", &self.config)
            .field("stats", &self.stats())
            .finish()
    }
}

impl ChatClient {
    /// Builds a client. A live client whose key variable is unset still serves
    /// cached responses and fails with `MissingKey` on the first cache miss.
    pub fn new(config: ClientConfig) -> Result<Self, ChatError> {
        let mut missing_key = None;
        let transport: Option<Box<dyn Transport>> = if config.mock_dir.is_some() {
            None
        } else {
            let key = match &config.api_key_env {
                Some(var) if !var.is_empty() => std::env::var(var).ok().or_else(|| {
                    missing_key = Some(var.clone());
                    None
                }),
                _ => None,
            };
            missing_key
                .is_none()
                .then(|| Box::new(HttpTransport::new(&config.endpoint, key, config.timeout)) as Box<dyn Transport>)
        };
        let mut client = Self::assemble(config, transport);
        client.missing_key = missing_key;
        Ok(client)
    }

    /// A client over a caller-supplied transport (used for tests and alternative providers).
    pub fn with_transport(config: ClientConfig, transport: Box<dyn Transport>) -> Self {
        Self::assemble(config, Some(transport))
    }

    fn assemble(config: ClientConfig, transport: Option<Box<dyn Transport>>) -> Self {
        ChatClient {
            config,
            transport,
            missing_key: None,
            network_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
            mock_hits: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            network_calls: self.network_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            mock_hits: self.mock_hits.load(Ordering::SeqCst),
        }
    }

    pub fn digest(&self, req: &GenerationRequest) -> String {
        request_digest(&self.config.model, req)
    }

    pub fn call(&self, req: &GenerationRequest) -> Result<String, ChatError> {
        let digest = self.digest(req);
        if let Some(dir) = &self.config.mock_dir {
            let path = dir.join(format!("{digest}.txt"));
            return match std::fs::read_to_string(&path) {
                Ok(text) => {
                    self.mock_hits.fetch_add(1, Ordering::SeqCst);
                    Ok(text)
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    Err(ChatError::MockMiss { digest, path })
                }
                Err(e) => Err(e.into()),
            };
        }

        let cache_path = self
            .config
            .cache_dir
            .as_ref()
            .map(|d| d.join(format!("{digest}.txt")));
        if let Some(path) = &cache_path {
            if let Ok(text) = std::fs::read_to_string(path) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(text);
            }
        }

        let Some(transport) = self.transport.as_ref() else {
            return Err(ChatError::MissingKey(self.missing_key.clone().unwrap_or_default()));
        };
        let body = ChatBody {
            model: self.config.model.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: req.prompt.clone(),
            }],
            temperature: req.temperature,
            max_tokens: req.max_output_tokens,
        };
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match transport.complete(&body) {
                Ok(text) => {
                    if let Some(path) = &cache_path {
                        write_atomic(path, text.as_bytes())?;
                    }
                    return Ok(text);
                }
                Err(TransportError::Io(msg)) => {
                    log::warn!("request {} attempt {attempt}/{attempts}: {msg}", req.request_index);
                    last = msg;
                }
                Err(TransportError::Status { status, body }) => {
                    return Err(ChatError::Status { status, body })
                }
                Err(TransportError::Response(msg)) => return Err(ChatError::Response(msg)),
            }
        }
        Err(ChatError::Transport {
            attempts,
            message: last,
        })
    }

    /// Issues requests with at most `max_in_flight` outstanding; results come back in
    /// `request_index` order regardless of completion order.
    pub fn call_many(
        &self,
        requests: &[GenerationRequest],
    ) -> Vec<(usize, Result<String, ChatError>)> {
        let workers = self.config.max_in_flight.max(1).min(requests.len().max(1));
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::with_capacity(requests.len()));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = requests.get(i) else { break };
                    let out = self.call(req);
                    results
                        .lock()
                        .expect("worker panicked")
                        .push((req.request_index, out));
                });
            }
        });
        let mut results = results.into_inner().expect("worker panicked");
        results.sort_by_key(|(i, _)| *i);
        results
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    struct Scripted {
        calls: Arc<AtomicUsize>,
        fail_first: usize,
        status: Option<u16>,
    }

    impl Transport for Scripted {
        fn complete(&self, body: &ChatBody) -> Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if let Some(status) = self.status {
                return Err(TransportError::Status {
                    status,
                    body: "rate limited".into(),
                });
            }
            if n < self.fail_first {
                return Err(TransportError::Io("connection refused".into()));
            }
            Ok(format!("echo: {}", body.messages[0].content))
        }
    }

    fn req(prompt: &str, index: usize) -> GenerationRequest {
        GenerationRequest {
            prompt: prompt.into(),
            temperature: 0.7,
            max_output_tokens: 256,
            request_index: index,
        }
    }

    fn scripted(cfg: ClientConfig, fail_first: usize, status: Option<u16>) -> (ChatClient, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let t = Scripted {
            calls: calls.clone(),
            fail_first,
            status,
        };
        (ChatClient::with_transport(cfg, Box::new(t)), calls)
    }

    #[test]
    fn digest_depends_on_model_and_sampling() {
        let r = req("p", 0);
        let base = request_digest("m", &r);
        assert_eq!(base, request_digest("m", &req("p", 5)), "index is not part of the key");
        assert_ne!(base, request_digest("other", &r));
        assert_ne!(base, request_digest("m", &GenerationRequest { temperature: 0.0, ..r.clone() }));
        assert_eq!(base.len(), 64);
    }

    #[test]
    fn mock_returns_fixture_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ClientConfig {
            mock_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let client = ChatClient::new(cfg).unwrap();
        let r = req("hello", 0);
        let content = "1. A\n2. B  \n\n";
        std::fs::write(dir.path().join(format!("{}.txt", client.digest(&r))), content).unwrap();
        assert_eq!(client.call(&r).unwrap(), content);
        match client.call(&req("other", 1)).unwrap_err() {
            ChatError::MockMiss { digest, .. } => {
                assert_eq!(digest, client.digest(&req("other", 1)))
            }
            e => panic!("unexpected {e}"),
        }
        assert_eq!(client.stats().network_calls, 0);
    }

    #[test]
    fn second_call_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ClientConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let (client, calls) = scripted(cfg, 0, None);
        let a = client.call(&req("x", 0)).unwrap();
        let b = client.call(&req("x", 1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(client.stats().cache_hits, 1);
    }

    #[test]
    fn retries_then_fails() {
        let (client, calls) = scripted(
            ClientConfig {
                retries: 2,
                ..Default::default()
            },
            usize::MAX,
            None,
        );
        match client.call(&req("x", 0)).unwrap_err() {
            ChatError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn transient_failure_recovers() {
        let (client, calls) = scripted(ClientConfig::default(), 1, None);
        assert!(client.call(&req("x", 0)).is_ok());
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn status_errors_carry_status_and_body() {
        let (client, calls) = scripted(ClientConfig::default(), 0, Some(429));
        match client.call(&req("x", 0)).unwrap_err() {
            ChatError::Status { status, body } => {
                assert_eq!(status, 429);
                assert_eq!(body, "rate limited");
            }
            e => panic!("unexpected {e}"),
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn call_many_orders_by_index() {
        let (client, _) = scripted(
            ClientConfig {
                max_in_flight: 3,
                ..Default::default()
            },
            0,
            None,
        );
        let reqs: Vec<_> = (0..20).rev().map(|i| req(&format!("p{i}"), i)).collect();
        let out = client.call_many(&reqs);
        let idx: Vec<usize> = out.iter().map(|(i, _)| *i).collect();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
        assert_eq!(out[7].1.as_ref().unwrap(), "echo: p7");
    }

    #[test]
    fn assistant_text_shape() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(assistant_text(body).unwrap(), "hi");
        assert!(assistant_text(r#"{"choices":[]}"#).is_err());
    }
}
