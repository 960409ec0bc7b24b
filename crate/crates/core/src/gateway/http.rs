//! Live HTTP backends speaking the OpenAI-compatible chat-completion and
//! embedding wire formats.
//!
//! API keys are read from the environment at construction time and held only
//! in memory; they never reach cassettes or the event log.

use super::{BackendReply, ChatBackend, ChatRequest, TokenUsage};
use crate::error::{Error, Result};
use crate::gateway::embed::Embedder;
use serde::Deserialize;
use std::time::{Duration, Instant};

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpChatBackend {
    /// `endpoint` is the full chat-completions URL; `env_key` names the
    /// environment variable holding the bearer token, if any.
    pub fn new(endpoint: &str, model: &str, env_key: Option<&str>) -> Result<Self> {
        let api_key = match env_key {
            Some(name) => Some(std::env::var(name).map_err(|_| {
                Error::Config(format!("environment variable {name} is not set"))
            })?),
            None => None,
        };
        Ok(Self {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?,
            endpoint: endpoint.to_owned(),
            model: model.to_owned(),
            api_key,
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<BackendReply, String> {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(serde_json::json!({"role": "system", "content": system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": request.user}));
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
        });
        if let Some(max) = request.max_output_tokens {
            body["max_tokens"] = serde_json::json!(max);
        }

        let started = Instant::now();
        let mut call = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("http status {status}"));
        }
        let parsed: ChatCompletion = response.json().map_err(|e| e.to_string())?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "response had no choices".to_owned())?;
        let usage = parsed
            .usage
            .map(|u| TokenUsage::new(u.prompt_tokens, u.completion_tokens))
            .unwrap_or_default();
        Ok(BackendReply {
            text,
            usage,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

#[derive(Deserialize)]
struct WireEmbedding {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<WireEmbedding>,
}

pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: &str,
        model: &str,
        env_key: Option<&str>,
        dimension: usize,
    ) -> Result<Self> {
        let api_key = match env_key {
            Some(name) => Some(std::env::var(name).map_err(|_| {
                Error::Config(format!("environment variable {name} is not set"))
            })?),
            None => None,
        };
        Ok(Self {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?,
            endpoint: endpoint.to_owned(),
            model: model.to_owned(),
            api_key,
            dimension,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = serde_json::json!({"model": self.model, "input": texts});
        let mut call = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| Error::Transport {
            backend: self.model.clone(),
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(Error::Transport {
                backend: self.model.clone(),
                attempts: 1,
                message: format!("http status {status}"),
            });
        }
        let parsed: EmbeddingsResponse = response.json().map_err(|e| Error::Transport {
            backend: self.model.clone(),
            attempts: 1,
            message: e.to_string(),
        })?;
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
