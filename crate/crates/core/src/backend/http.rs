//! HTTP adapter speaking the de-facto chat-completions wire shape,
//! so hosted servers and local inference servers work unmodified.

use super::{
    Backend, BackendConfig, BackendError, ChatRequest, Completion, FinishReason, TokenUsage,
};
use serde::Deserialize;
use serde_json::json;
use ureq::Agent;

/// Environment variable holding an optional bearer token.
pub const API_KEY_ENV: &str = "MEDQA_API_KEY";

#[derive(Deserialize)]
struct WireResponse {
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
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

pub struct HttpBackend {
    agent: Agent,
    endpoint: String,
    bearer: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Self {
        let agent = Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let base = config.base_url.trim_end_matches('/');
        let endpoint = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let bearer = std::env::var(API_KEY_ENV).ok().filter(|v| !v.is_empty());
        Self {
            agent,
            endpoint,
            bearer,
        }
    }

    fn map_transport_error(err: ureq::Error) -> BackendError {
        match err {
            ureq::Error::Timeout(reason) => BackendError::Timeout {
                attempts: 1,
                last: reason.to_string(),
            },
            other => BackendError::Network {
                attempts: 1,
                last: other.to_string(),
            },
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let mut body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "frequency_penalty": request.params.frequency_penalty,
            "presence_penalty": request.params.presence_penalty,
            "max_tokens": request.params.max_tokens,
        });
        if let Some(seed) = request.params.seed {
            body["seed"] = json!(seed);
        }

        let mut builder = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json");
        if let Some(token) = &self.bearer {
            builder = builder.header("authorization", &format!("Bearer {token}"));
        }
        let mut response = builder
            .send_json(&body)
            .map_err(Self::map_transport_error)?;

        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            // Transient server-side condition: let the client retry.
            return Err(BackendError::Network {
                attempts: 1,
                last: format!("status {status}"),
            });
        }
        if status >= 400 {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Refusal {
                status: Some(status),
                message: text,
            });
        }

        let wire: WireResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("response has no choices".into()))?;
        let text = choice.message.content.ok_or_else(|| {
            BackendError::MalformedResponse("choice has no message content".into())
        })?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("error") => FinishReason::Error,
            _ => FinishReason::Stop,
        };
        let token_usage = wire
            .usage
            .and_then(|u| match (u.prompt_tokens, u.completion_tokens) {
                (Some(p), Some(c)) => Some(TokenUsage {
                    prompt_tokens: p,
                    completion_tokens: c,
                }),
                _ => None,
            });
        Ok(Completion {
            text,
            finish_reason,
            token_usage,
        })
    }
}
