//! OpenAI-compatible HTTP backend.
//!
//! `POST {base}/v1/chat/completions` with content parts
//! (`{"type":"text"}` / `{"type":"image_url"}` carrying a data URL) and
//! `POST {base}/v1/embeddings`. The credential comes from an environment
//! variable only.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{Backend, ChatRequest, ChatResponse, FinishReason, GatewayError, Part, Usage};

const BODY_EXCERPT: usize = 512;

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Server root, e.g. `https://api.openai.com`.
    pub base_url: String,
    pub embedding_model_id: String,
    pub api_key: Option<String>,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, embedding_model_id: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            embedding_model_id: embedding_model_id.into(),
            api_key: None,
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(600),
        }
    }

    /// Reads the credential from `var`. Errors when it is unset.
    pub fn with_key_from_env(mut self, var: &str) -> Result<Self, GatewayError> {
        let key = std::env::var(var).map_err(|_| GatewayError::Credential(var.to_string()))?;
        self.api_key = Some(key);
        Ok(self)
    }
}

pub struct LiveBackend {
    client: reqwest::blocking::Client,
    config: LiveConfig,
}

/// JSON body for a chat-completions request.
pub fn wire_body(request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|message| {
            let content: Vec<Value> = message
                .parts
                .iter()
                .map(|part| match part {
                    Part::Text(text) => json!({"type": "text", "text": text}),
                    Part::Image {
                        media_type,
                        data_base64,
                    } => json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{};base64,{}", media_type.as_str(), data_base64)}
                    }),
                })
                .collect();
            json!({"role": message.role, "content": content})
        })
        .collect();

    let mut body = json!({
        "model": request.model_id,
        "messages": messages,
        "temperature": request.temperature,
    });
    if let Some(effort) = request.effort {
        body["reasoning_effort"] = json!(effort.as_str());
    }
    if let Some(max) = request.max_output_tokens {
        body["max_completion_tokens"] = json!(max);
    }
    body
}

#[derive(Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub fn decode_chat_response(body: &str) -> Result<ChatResponse, GatewayError> {
    let wire: WireChatResponse =
        serde_json::from_str(body).map_err(|e| GatewayError::Decode(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Decode("response has no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        _ => FinishReason::Error,
    };
    let usage = wire
        .usage
        .map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    Ok(ChatResponse {
        text: choice.message.content.unwrap_or_default(),
        usage,
        finish_reason,
    })
}

#[derive(Deserialize)]
struct WireEmbeddings {
    data: Vec<WireEmbedding>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    embedding: Vec<f64>,
}

pub fn decode_embedding_response(body: &str) -> Result<Vec<f64>, GatewayError> {
    let wire: WireEmbeddings =
        serde_json::from_str(body).map_err(|e| GatewayError::Decode(e.to_string()))?;
    wire.data
        .into_iter()
        .next()
        .map(|d| d.embedding)
        .ok_or_else(|| GatewayError::Decode("embedding response has no data".into()))
}

fn excerpt(body: &str) -> String {
    match body.char_indices().nth(BODY_EXCERPT) {
        Some((cut, _)) => format!("{}...", &body[..cut]),
        None => body.to_string(),
    }
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Network {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { client, config })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// POSTs `body`, retrying transport failures with exponential backoff.
    /// Any non-success status is returned at once as a protocol error.
    fn post(&self, path: &str, body: &Value) -> Result<String, GatewayError> {
        let url = self.url(path);
        let mut backoff = self.config.initial_backoff;
        let attempts = self.config.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            let mut builder = self.client.post(&url).json(body);
            if let Some(key) = &self.config.api_key {
                builder = builder.bearer_auth(key);
            }
            match builder.send() {
                Ok(response) => {
                    let status = response.status();
                    let text = response.text().map_err(|e| GatewayError::Network {
                        attempts: attempt,
                        message: e.to_string(),
                    })?;
                    if !status.is_success() {
                        return Err(GatewayError::Protocol {
                            status: status.as_u16(),
                            body_excerpt: excerpt(&text),
                        });
                    }
                    debug!(%url, attempt, "request succeeded");
                    return Ok(text);
                }
                Err(e) => {
                    last_error = e.to_string();
                    warn!(%url, attempt, error = %last_error, "transport failure");
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(GatewayError::Network {
            attempts,
            message: last_error,
        })
    }
}

impl Backend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = self.post("/v1/chat/completions", &wire_body(request))?;
        decode_chat_response(&body)
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let body = json!({"model": self.config.embedding_model_id, "input": text});
        let response = self.post("/v1/embeddings", &body)?;
        decode_embedding_response(&response)
    }

    fn embedding_model_id(&self) -> &str {
        &self.config.embedding_model_id
    }
}
