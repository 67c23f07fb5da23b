//! Uniform completion interface with token accounting.
//!
//! Every LLM call in the crate goes through [`Gateway::complete`], which
//! appends a [`ChatExchange`] to the gateway's [`TokenLedger`]. Providers
//! only produce text; accounting happens here so no call path can skip it.

pub mod prompts;
mod remote;
mod replay;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use actlib_core::tokens::estimate_tokens;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use prompts::Prompt;
pub use remote::{RemoteConfig, RemoteProvider};
pub use replay::{Fixture, RecordingProvider, ReplayProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    ContainsPageHtml,
    CatalogOnly,
    StepPrompt,
    Synthesis,
    Retrieval,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("replay miss for prompt key {key} (template {template}, slots {slots})")]
    ReplayMiss { key: String, template: String, slots: String },
    #[error("call to template {0} carries no tags")]
    Unclassified(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: Option<Usage>,
}

/// A source of completions. Providers report transient throttling as
/// [`GatewayError::RateLimited`]; the gateway owns the retry loop.
pub trait Provider: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<ProviderReply, GatewayError>;
}

/// Provider backed by a closure, for scripted answers in tests and tools.
pub struct FnProvider<F>(pub F);

impl<F> Provider for FnProvider<F>
where
    F: Fn(&Prompt) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, prompt: &Prompt) -> Result<ProviderReply, GatewayError> {
        (self.0)(prompt).map(|text| ProviderReply { text, usage: None })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ChatExchange {
    pub template: String,
    pub prompt_key: String,
    pub system_text: String,
    pub user_text: String,
    pub reply_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Counts come from the 4-chars-per-token estimator, not the provider.
    pub estimated: bool,
    pub tags: BTreeSet<Tag>,
}

impl ChatExchange {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TokenLedger {
    pub scope: String,
    pub exchanges: Vec<ChatExchange>,
}

impl TokenLedger {
    pub fn new(scope: impl Into<String>) -> Self {
        Self { scope: scope.into(), exchanges: Vec::new() }
    }

    pub fn calls(&self) -> usize {
        self.exchanges.len()
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.exchanges.iter().map(|e| e.prompt_tokens).sum()
    }

    pub fn completion_tokens(&self) -> u64 {
        self.exchanges.iter().map(|e| e.completion_tokens).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.exchanges.iter().map(ChatExchange::total_tokens).sum()
    }

    pub fn any_estimated(&self) -> bool {
        self.exchanges.iter().any(|e| e.estimated)
    }

    pub fn count_tagged(&self, tag: Tag) -> usize {
        self.exchanges.iter().filter(|e| e.tags.contains(&tag)).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 4, base_delay: Duration::from_millis(500) }
    }
}

pub struct Gateway {
    provider: Box<dyn Provider>,
    ledger: Mutex<TokenLedger>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("calls", &self.mark()).field("retry", &self.retry).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(provider: impl Provider + 'static) -> Self {
        Self::from_boxed(Box::new(provider))
    }

    pub fn from_boxed(provider: Box<dyn Provider>) -> Self {
        Self { provider, ledger: Mutex::new(TokenLedger::new("session")), retry: RetryPolicy::default() }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn complete(&self, prompt: &Prompt, tags: &[Tag]) -> Result<String, GatewayError> {
        if tags.is_empty() {
            return Err(GatewayError::Unclassified(prompt.template.clone()));
        }
        let mut attempt = 0;
        let reply = loop {
            attempt += 1;
            match self.provider.complete(prompt) {
                Err(GatewayError::RateLimited { .. }) if attempt < self.retry.max_attempts => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt - 1);
                    log::warn!("rate limited on {}; retrying in {delay:?}", prompt.template);
                    thread::sleep(delay);
                }
                Err(GatewayError::RateLimited { .. }) => return Err(GatewayError::RateLimited { attempts: attempt }),
                other => break other?,
            }
        };
        let (prompt_tokens, completion_tokens, estimated) = match reply.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens, false),
            None => {
                (estimate_tokens(&prompt.system) + estimate_tokens(&prompt.user), estimate_tokens(&reply.text), true)
            }
        };
        let exchange = ChatExchange {
            template: prompt.template.clone(),
            prompt_key: prompt.key(),
            system_text: prompt.system.clone(),
            user_text: prompt.user.clone(),
            reply_text: reply.text.clone(),
            prompt_tokens,
            completion_tokens,
            estimated,
            tags: tags.iter().copied().collect(),
        };
        self.ledger.lock().expect("ledger poisoned").exchanges.push(exchange);
        Ok(reply.text)
    }

    /// Number of exchanges recorded so far; pass to [`Gateway::ledger_since`].
    pub fn mark(&self) -> usize {
        self.ledger.lock().expect("ledger poisoned").exchanges.len()
    }

    pub fn ledger_since(&self, mark: usize) -> TokenLedger {
        let ledger = self.ledger.lock().expect("ledger poisoned");
        TokenLedger {
            scope: ledger.scope.clone(),
            exchanges: ledger.exchanges.get(mark..).unwrap_or_default().to_vec(),
        }
    }

    pub fn ledger(&self) -> TokenLedger {
        self.ledger_since(0)
    }
}

/// Replay key: first 16 hex digits of SHA-256 over the template name and the
/// sorted salient slots, one `name=value` per line.
pub fn prompt_key(template: &str, slots: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(template.as_bytes());
    h.update(b"\n");
    for (k, v) in slots {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// Short content digest used for salient slots that stand for large inputs.
pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
}

pub fn digest_json<T: Serialize + ?Sized>(value: &T) -> String {
    digest(&serde_json::to_string(value).expect("serializable"))
}

/// Locates the first balanced JSON object or array in an LLM reply,
/// tolerating prose and code fences around it.
pub fn extract_json(reply: &str) -> Option<&str> {
    let bytes = reply.as_bytes();
    let mut search = 0;
    while let Some(off) = reply[search..].find(['{', '[']) {
        let start = search + off;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' | b'[' => depth += 1,
                b'}' | b']' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &reply[start..=i];
                        if serde_json::from_str::<serde_json::Value>(candidate).is_ok() {
                            return Some(candidate);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        search = start + 1;
    }
    None
}
