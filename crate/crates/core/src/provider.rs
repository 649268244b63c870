//! External chat-completion and embedding providers.
//!
//! The engine talks to providers through the [`ChatTransport`] trait so
//! tests can substitute canned or failing transports. [`RetryingClient`]
//! adds bounded backoff (at most three attempts) on top of any transport.
//! Prompt templates ship embedded in the binary and can be overridden by
//! pointing the config at a directory of replacement files.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{MemoraError, Result};

/// Environment variable holding the bearer token for external providers.
pub const PROVIDER_KEY_ENV: &str = "MEMORA_PROVIDER_KEY";

/// Fixed default generation seed.
pub const DEFAULT_SEED: u64 = 42;

pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub seed: u64,
    pub temperature: f64,
}

impl ProviderRequest {
    pub fn user(model: &str, prompt: String) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt,
            }],
            seed: DEFAULT_SEED,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    #[serde(default)]
    pub usage_tokens: Option<u64>,
}

/// A single round trip to a completion service. Implementations report
/// transient trouble as `Err`; retry policy lives above this trait.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ProviderRequest) -> Result<ProviderResponse>;
}

/// High-level provider handle used by ingestion and retrieval.
pub trait ChatProvider: Send + Sync {
    fn chat_complete(&self, request: &ProviderRequest) -> Result<ProviderResponse>;
}

/// Wraps a transport with bounded retry: up to [`MAX_ATTEMPTS`] tries,
/// sleeping `backoff * 2^attempt` between failures.
pub struct RetryingClient {
    transport: Arc<dyn ChatTransport>,
    backoff: Duration,
}

impl RetryingClient {
    pub fn new(transport: Arc<dyn ChatTransport>) -> Self {
        Self {
            transport,
            backoff: Duration::from_millis(100),
        }
    }

    /// Test hook: shrink or zero the backoff so retries are instant.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }
}

impl ChatProvider for RetryingClient {
    fn chat_complete(&self, request: &ProviderRequest) -> Result<ProviderResponse> {
        let mut last_err = None;
        for attempt in 0..MAX_ATTEMPTS {
            match self.transport.send(request) {
                Ok(response) => return Ok(response),
                Err(e) => {
                    last_err = Some(e);
                    if attempt + 1 < MAX_ATTEMPTS {
                        std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}

/// Blocking HTTP transport speaking the JSON chat contract:
/// request `{model, messages, seed, temperature}`, response
/// `{text, usage_tokens?}`. Sends `MEMORA_PROVIDER_KEY` as a bearer
/// token when set.
pub struct HttpChatTransport {
    endpoint: String,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpChatTransport {
    pub fn new(endpoint: &str) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| MemoraError::Provider(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            client,
            api_key: std::env::var(PROVIDER_KEY_ENV).ok(),
        })
    }
}

impl ChatTransport for HttpChatTransport {
    fn send(&self, request: &ProviderRequest) -> Result<ProviderResponse> {
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| MemoraError::Provider(e.to_string()))?;
        if !response.status().is_success() {
            return Err(MemoraError::Provider(format!(
                "provider returned status {}",
                response.status()
            )));
        }
        response
            .json::<ProviderResponse>()
            .map_err(|e| MemoraError::Provider(format!("bad provider payload: {e}")))
    }
}

/// External embedding service: request `{model, input: [text]}`,
/// response `{vectors: [[..]]}`.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str, model: &str) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| MemoraError::Provider(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            client,
            api_key: std::env::var(PROVIDER_KEY_ENV).ok(),
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let request = EmbedRequest {
            model: &self.model,
            input: vec![text],
        };
        let mut builder = self.client.post(&self.endpoint).json(&request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| MemoraError::Provider(e.to_string()))?;
        if !response.status().is_success() {
            return Err(MemoraError::Provider(format!(
                "embedding provider returned status {}",
                response.status()
            )));
        }
        let payload: EmbedResponse = response
            .json()
            .map_err(|e| MemoraError::Provider(format!("bad embedding payload: {e}")))?;
        let vector = payload
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| MemoraError::Provider("empty embedding response".into()))?;
        EmbeddingVector::new(vector)
    }
}

// ─── prompt templates ───

/// The five curation prompt templates. Defaults are compiled in; any of
/// them can be replaced by a file of the same name in a template
/// directory, which keeps local prompt experiments auditable by diff.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub segmentation: String,
    pub episodic: String,
    pub factual: String,
    pub update: String,
    pub cue: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            segmentation: include_str!("../assets/prompts/segmentation.txt").to_string(),
            episodic: include_str!("../assets/prompts/episodic.txt").to_string(),
            factual: include_str!("../assets/prompts/factual.txt").to_string(),
            update: include_str!("../assets/prompts/update.txt").to_string(),
            cue: include_str!("../assets/prompts/cue.txt").to_string(),
        }
    }
}

impl PromptSet {
    /// Load overrides from a directory holding any of segmentation.txt,
    /// episodic.txt, factual.txt, update.txt, cue.txt.
    pub fn load_with_overrides(dir: &Path) -> Result<Self> {
        let mut set = Self::default();
        for (name, slot) in [
            ("segmentation.txt", &mut set.segmentation),
            ("episodic.txt", &mut set.episodic),
            ("factual.txt", &mut set.factual),
            ("update.txt", &mut set.update),
            ("cue.txt", &mut set.cue),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)?;
            }
        }
        Ok(set)
    }
}

/// Fill `{name}` slots in a template. Unknown slots are left alone so
/// template literals like the JSON example braces survive.
pub fn render_template(template: &str, slots: &BTreeMap<&str, String>) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// A chat client bundled with its prompts and sampling settings; the
/// unit every provider-backed pipeline step works against.
#[derive(Clone)]
pub struct ProviderBackend {
    pub chat: Arc<dyn ChatProvider>,
    pub prompts: PromptSet,
    pub model: String,
    pub seed: u64,
    pub temperature: f64,
}

impl ProviderBackend {
    pub fn complete(&self, template: &str, slots: &BTreeMap<&str, String>) -> Result<String> {
        let mut request = ProviderRequest::user(&self.model, render_template(template, slots));
        request.seed = self.seed;
        request.temperature = self.temperature;
        Ok(self.chat.chat_complete(&request)?.text)
    }
}
