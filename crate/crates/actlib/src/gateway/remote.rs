//! HTTP+JSON chat-completion provider (OpenAI-compatible wire format).
//!
//! Request: `{"model", "temperature": 0, "messages": [{"role": "system", ...}, {"role": "user", ...}]}`.
//! Response: `choices[0].message.content`, with an optional
//! `usage {prompt_tokens, completion_tokens}` block.

use std::env;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{GatewayError, Prompt, Provider, ProviderReply, Usage};

pub const ENV_ENDPOINT: &str = "ACTLIB_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "ACTLIB_LLM_API_KEY";
pub const ENV_MODEL: &str = "ACTLIB_LLM_MODEL";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn from_env() -> Result<Self, GatewayError> {
        let endpoint =
            env::var(ENV_ENDPOINT).map_err(|_| GatewayError::Transport(format!("{ENV_ENDPOINT} is not set")))?;
        Ok(Self {
            endpoint,
            api_key: env::var(ENV_API_KEY).ok(),
            model: env::var(ENV_MODEL).unwrap_or_else(|_| "default".into()),
            timeout: Duration::from_secs(120),
        })
    }
}

pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }
}

impl Provider for RemoteProvider {
    fn complete(&self, prompt: &Prompt) -> Result<ProviderReply, GatewayError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if status == 429 {
            return Err(GatewayError::RateLimited { attempts: 1 });
        }
        if !(200..300).contains(&status) {
            return Err(GatewayError::Transport(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| GatewayError::Transport(format!("bad completion body: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::Transport("completion has no choices".into()))?;
        Ok(ProviderReply {
            text: content,
            usage: parsed
                .usage
                .map(|u| Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens }),
        })
    }
}
