//! OpenAI-compatible chat-completions client.
//!
//! Every request carries a single user message (one profile, one question)
//! at temperature 0 unless overridden. Transport errors, 429 and 5xx
//! responses are retried with exponential backoff.

use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::parse::parse_llm_reply;
use super::{BackendConfig, BackendError, Response, ResponseBackend};
use crate::knowledge::{KcUniverse, Question, StudentProfile};
use crate::prompt::{ExemplarBank, PromptBuilder, PromptTemplate, PromptText};

const MAX_BACKOFF: Duration = Duration::from_secs(20);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("endpoint returned an empty completion")]
    EmptyCompletion,
    #[error("malformed completion payload: {0}")]
    Malformed(String),
}

impl LlmError {
    fn retryable(&self) -> bool {
        match self {
            Self::Transport(_) => true,
            Self::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// JSON body for one chat-completion request.
pub fn chat_request_body(model: &str, prompt: &str, temperature: f64) -> Value {
    json!({
        "model": model,
        "temperature": temperature,
        "messages": [{ "role": "user", "content": prompt }],
    })
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    max_retries: u32,
    backoff: Duration,
}

impl LlmClient {
    /// Build a client; the API key is read from `config.api_key_env`.
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self {
            http,
            url: format!("{}/chat/completions", config.endpoint.trim_end_matches('/')),
            model: config.model.clone(),
            api_key,
            temperature: config.temperature,
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.retry_backoff_ms),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Send `prompt` and return the assistant text.
    pub fn complete(&self, prompt: &PromptText) -> Result<String, LlmError> {
        let body = chat_request_body(&self.model, &prompt.text, self.temperature);
        let mut attempt = 0;
        loop {
            match self.send(&body) {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable() && attempt < self.max_retries => {
                    let delay = self.backoff.saturating_mul(1 << attempt.min(16)).min(MAX_BACKOFF);
                    log::debug!("retrying after {e} (attempt {}), sleeping {delay:?}", attempt + 1);
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn send(&self, body: &Value) -> Result<String, LlmError> {
        let mut request = self.http.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            let mut body = text;
            body.truncate(500);
            return Err(LlmError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let payload: Value = serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
        let content = payload
            .pointer("/choices/0/message/content")
            .ok_or_else(|| LlmError::Malformed("missing choices[0].message.content".into()))?;
        match content {
            Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
            Value::String(_) | Value::Null => Err(LlmError::EmptyCompletion),
            _ => Err(LlmError::Malformed("content is not a string".into())),
        }
    }
}

/// Prompts an LLM with the teacher role-play prompt and parses its reply.
pub struct LlmBackend {
    client: LlmClient,
    universe: KcUniverse,
    bank: ExemplarBank,
    template: PromptTemplate,
    id: String,
}

impl LlmBackend {
    pub fn new(client: LlmClient, universe: KcUniverse, bank: ExemplarBank, template: PromptTemplate) -> Self {
        let id = format!("llm:{}", client.model);
        Self {
            client,
            universe,
            bank,
            template,
            id,
        }
    }

    pub fn prompt_for(&self, profile: &StudentProfile, question: &Question) -> Result<PromptText, BackendError> {
        Ok(PromptBuilder::new(&self.universe, &self.bank, &self.template).build(profile, question)?)
    }
}

impl ResponseBackend for LlmBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn answer(&self, profile: &StudentProfile, question: &Question) -> Result<Response, BackendError> {
        let prompt = self.prompt_for(profile, question)?;
        let reply = self.client.complete(&prompt)?;
        let (index, rationale) =
            parse_llm_reply(&reply, question.options.len()).map_err(|error| BackendError::Unparseable {
                error,
                reply: reply.clone(),
            })?;
        let mut response = Response::new(profile, question, index, rationale, &self.id)?;
        response.raw_reply = Some(reply);
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_shape() {
        let body = chat_request_body("gpt-4", "hello", 0.0);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["model"], "gpt-4");
        let messages = body["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 1);
        assert_eq!(messages[0]["role"], "user");
        assert_eq!(messages[0]["content"], "hello");
    }

    #[test]
    fn url_joins_endpoint() {
        let config = BackendConfig {
            endpoint: "http://localhost:9/v1/".into(),
            ..Default::default()
        };
        assert_eq!(
            LlmClient::new(&config).unwrap().url(),
            "http://localhost:9/v1/chat/completions"
        );
    }

    #[test]
    fn retry_classification() {
        assert!(LlmError::Transport("x".into()).retryable());
        assert!(LlmError::Status {
            status: 503,
            body: String::new()
        }
        .retryable());
        assert!(LlmError::Status {
            status: 429,
            body: String::new()
        }
        .retryable());
        assert!(!LlmError::Status {
            status: 401,
            body: String::new()
        }
        .retryable());
        assert!(!LlmError::EmptyCompletion.retryable());
    }
}
