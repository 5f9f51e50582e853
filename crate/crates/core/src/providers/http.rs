//! Live clients: chat-completions endpoints for the analyzer and reasoner,
//! and the `/embed` text-embedding service.

use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::EmbeddingVector;
use crate::providers::chat::{ChatClient, ChatError, ImageRef};
use crate::providers::embedding::{Capabilities, EmbeddingSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Bearer token; sent only when present.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl EndpointConfig {
    /// Reads `<ROLE>_API_BASE_URL`, `<ROLE>_API_KEY` and `<ROLE>_MODEL_NAME`,
    /// falling back to the unprefixed `API_BASE_URL`, `API_KEY` and
    /// `MODEL_NAME`.
    pub fn from_env(role: &str) -> Result<Self> {
        let var = |name: &str| {
            std::env::var(format!("{role}_{name}"))
                .or_else(|_| std::env::var(name))
                .ok()
                .filter(|v| !v.is_empty())
        };
        let base_url = var("API_BASE_URL")
            .ok_or_else(|| Error::Invalid(format!("{role}_API_BASE_URL / API_BASE_URL is not set")))?;
        let model =
            var("MODEL_NAME").ok_or_else(|| Error::Invalid(format!("{role}_MODEL_NAME / MODEL_NAME is not set")))?;
        Ok(Self {
            base_url,
            model,
            api_key: var("API_KEY"),
            timeout_secs: default_timeout(),
        })
    }
}

fn http_client(timeout: Duration) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot build HTTP client: {e}")))
}

fn transport_error(err: reqwest::Error, timeout: Duration) -> ChatError {
    if err.is_timeout() {
        ChatError::Timeout(timeout)
    } else {
        ChatError::Transport(err.to_string())
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpChatClient {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        let client = http_client(Duration::from_secs(config.timeout_secs))?;
        Ok(Self { config, client })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// Request body for one single-turn call.
    pub fn request_body(&self, instruction: &str, image: Option<&ImageRef>) -> Result<Value, ChatError> {
        let mut content = vec![json!({ "type": "text", "text": instruction })];
        if let Some(image) = image {
            let path = image.path.as_ref().ok_or_else(|| {
                ChatError::Image(format!(
                    "frame {} of {} has no image file",
                    image.frame.index, image.frame.video
                ))
            })?;
            let bytes = std::fs::read(path).map_err(|e| ChatError::Image(format!("{}: {e}", path.display())))?;
            let mime = match path.extension().and_then(|e| e.to_str()) {
                Some(ext) if ext.eq_ignore_ascii_case("png") => "image/png",
                _ => "image/jpeg",
            };
            let data = base64::engine::general_purpose::STANDARD.encode(bytes);
            content.push(json!({
                "type": "image_url",
                "image_url": { "url": format!("data:{mime};base64,{data}") }
            }));
        }
        Ok(json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": content }],
        }))
    }
}

/// Text of the first choice; accepts both string and content-part arrays.
pub fn completion_text(body: &Value) -> Result<String, ChatError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ChatError::InvalidResponse("no choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(ChatError::InvalidResponse(format!("unexpected content {other}"))),
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, instruction: &str, image: Option<&ImageRef>) -> Result<String, ChatError> {
        let timeout = Duration::from_secs(self.config.timeout_secs);
        let body = self.request_body(instruction, image)?;
        let mut request = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| transport_error(e, timeout))?;
        let status = response.status();
        let text = response.text().map_err(|e| transport_error(e, timeout))?;
        if !status.is_success() {
            let body: String = text.chars().take(500).collect();
            return Err(ChatError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| ChatError::InvalidResponse(format!("response is not JSON: {e}")))?;
        completion_text(&value)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for the text-embedding service: `POST /embed {texts}` answers
/// `{vectors}`.
pub struct HttpTextEmbedder {
    base_url: String,
    dim: usize,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

impl HttpTextEmbedder {
    pub fn new(base_url: impl Into<String>, dim: usize, timeout: Duration) -> Result<Self> {
        Ok(Self {
            base_url: base_url.into(),
            dim,
            timeout,
            client: http_client(timeout)?,
        })
    }
}

impl EmbeddingSource for HttpTextEmbedder {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            image_by_ref: false,
            text: true,
        }
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let url = format!("{}/embed", self.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| transport_error(e, self.timeout))?;
        let status = response.status();
        let text = response.text().map_err(|e| transport_error(e, self.timeout))?;
        if !status.is_success() {
            return Err(ChatError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            }
            .into());
        }
        let parsed: EmbedResponse =
            serde_json::from_str(&text).map_err(|e| ChatError::InvalidResponse(format!("bad /embed response: {e}")))?;
        parsed.vectors.into_iter().map(EmbeddingVector::normalize).collect()
    }
}
