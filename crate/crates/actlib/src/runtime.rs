//! Serving requests from the library, with exploration as the fallback.

use actlib_core::params::check_value;
use actlib_core::staleness::Outcome;
use actlib_core::{substitute_params, ActionApi, Bindings, ParamSpec, SubstituteError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::executor::{run_script, ExecError, ExecutionTrace, Session, SessionError};
use crate::gateway::prompts::{render, RETRIEVE};
use crate::gateway::{digest_json, extract_json, Gateway, GatewayError, Tag, TokenLedger};
use crate::generation::{unravel_run, UnravelOptions};
use crate::library::{integrate_trace, ApiSource, IntegrationKind, LibraryStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confidence {
    Match,
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ApiMatch {
    pub api_id: Option<String>,
    pub confidence: Confidence,
    pub bindings: Bindings,
}

impl ApiMatch {
    pub fn no_match() -> Self {
        Self { api_id: None, confidence: Confidence::NoMatch, bindings: Bindings::new() }
    }

    pub fn is_match(&self) -> bool {
        self.confidence == Confidence::Match
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("unusable LLM reply after retry: {0}")]
    LlmReplyUnparseable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct CatalogEntry<'a> {
    name: &'a str,
    website: &'a str,
    description: &'a str,
    params: &'a [ParamSpec],
}

#[derive(Deserialize)]
struct RetrieveReply {
    #[serde(rename = "match")]
    matched: bool,
    #[serde(default)]
    api: Option<String>,
    #[serde(default)]
    website: Option<String>,
    #[serde(default)]
    bindings: serde_json::Map<String, Value>,
}

fn literal_of(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Checks the reply against the catalog. `Ok(None)` is a downgrade to no-match.
fn ground(reply: RetrieveReply, store: &LibraryStore) -> Result<Option<ApiMatch>, String> {
    if !reply.matched {
        return Ok(None);
    }
    let name = reply.api.ok_or("match without an api name")?;
    let record = match &reply.website {
        Some(w) => store.find_by_name(w, &name),
        None => {
            let mut hits = store.records().filter(|r| r.api.name == name);
            match (hits.next(), hits.next()) {
                (Some(r), None) => Some(r),
                _ => None,
            }
        }
    };
    let Some(record) = record else {
        log::warn!("retrieval picked {name:?}, which is not in the catalog");
        return Ok(None);
    };
    let api = &record.api;
    let mut bindings = Bindings::new();
    for (k, v) in reply.bindings {
        if v.is_null() {
            continue;
        }
        let Some(spec) = api.param(&k) else {
            log::warn!("retrieval bound unknown param {k:?} of {}", api.name);
            return Ok(None);
        };
        let Some(raw) = literal_of(&v) else {
            log::warn!("binding {k:?} is not a scalar");
            return Ok(None);
        };
        match check_value(spec.value_type, &raw) {
            Ok(norm) => {
                bindings.insert(k, norm);
            }
            Err(e) => {
                log::warn!("binding {k:?} rejected: {e}");
                return Ok(None);
            }
        }
    }
    if let Some(p) = api.params.iter().find(|p| p.required && !bindings.contains_key(&p.name)) {
        log::warn!("retrieval left required param {:?} of {} unbound", p.name, api.name);
        return Ok(None);
    }
    Ok(Some(ApiMatch { api_id: Some(api.api_id.clone()), confidence: Confidence::Match, bindings }))
}

/// One LLM call maps `request` to an api of the library and its arguments.
/// Only names, descriptions and parameter specs are sent.
pub fn retrieve_and_fill(request: &str, store: &LibraryStore, gateway: &Gateway) -> Result<ApiMatch, RuntimeError> {
    if store.is_empty() {
        return Ok(ApiMatch::no_match());
    }
    let catalog: Vec<CatalogEntry> = store
        .records()
        .map(|r| CatalogEntry {
            name: &r.api.name,
            website: &r.api.website,
            description: &r.api.description,
            params: &r.api.params,
        })
        .collect();
    let catalog_text = serde_json::to_string_pretty(&catalog).expect("catalog serializes");
    let salient = [("request", request.to_string()), ("catalog", digest_json(&catalog))];
    let mut feedback = String::new();
    let mut last = String::new();
    for attempt in 1..=2 {
        let prompt =
            render(RETRIEVE, &[("request", request), ("catalog", &catalog_text), ("feedback", &feedback)], &salient)
                .with_attempt(attempt);
        let reply = gateway.complete(&prompt, &[Tag::Retrieval, Tag::CatalogOnly])?;
        let parsed = extract_json(&reply)
            .ok_or_else(|| "no JSON object in reply".to_string())
            .and_then(|b| serde_json::from_str::<RetrieveReply>(b).map_err(|e| e.to_string()))
            .and_then(|r| ground(r, store));
        match parsed {
            Ok(m) => return Ok(m.unwrap_or_else(ApiMatch::no_match)),
            Err(e) => {
                log::warn!("retrieve reply rejected: {e}");
                feedback =
                    format!("\nYour previous reply was rejected: {e}. Reply again following the format exactly.");
                last = e;
            }
        }
    }
    Err(RuntimeError::LlmReplyUnparseable(last))
}

#[derive(Debug, Error)]
pub enum ExecuteApiError {
    #[error(transparent)]
    Bindings(#[from] SubstituteError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("step {index} failed")]
    StepFailed { index: usize, trace: ExecutionTrace },
}

/// Substitutes `bindings` and runs the api, stopping at the first failed step.
/// Makes no LLM calls.
pub fn execute_api(
    api: &ActionApi,
    bindings: &Bindings,
    session: &mut dyn Session,
) -> Result<ExecutionTrace, ExecuteApiError> {
    let script = substitute_params(api, bindings)?;
    let trace = run_script(session, &script, true)?;
    match trace.first_failure() {
        Some(index) => Err(ExecuteApiError::StepFailed { index, trace }),
        None => Ok(trace),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskStatus {
    CompletedViaApi,
    CompletedViaUnravel,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TaskResult {
    pub request: String,
    pub status: TaskStatus,
    pub trace: Option<ExecutionTrace>,
    pub tokens: TokenLedger,
    pub library_updated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_id: Option<String>,
    #[serde(default, skip_serializing_if = "Bindings::is_empty")]
    pub bindings: Bindings,
    /// What went wrong along the way, in order; the last entry is the deepest error.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl TaskResult {
    /// Report with token totals alongside the ledger.
    pub fn to_report(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("result serializes");
        v["token-totals"] = json!({
            "calls": self.tokens.calls(),
            "prompt-tokens": self.tokens.prompt_tokens(),
            "completion-tokens": self.tokens.completion_tokens(),
            "total-tokens": self.tokens.total_tokens(),
            "estimated": self.tokens.any_estimated(),
        });
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuntimeOptions {
    /// Website to explore when no api applies.
    pub website: String,
    pub unravel: UnravelOptions,
}

/// Produces a fresh session positioned at the site's start page.
pub type SessionFactory<'a> = dyn FnMut() -> Result<Box<dyn Session>, SessionError> + 'a;

/// Serves one request: retrieval, then direct api execution, falling back to
/// exploration when nothing matches, the api is stale or its execution fails.
/// A successful exploration is folded into the library.
pub fn handle_request(
    request: &str,
    store: &mut LibraryStore,
    sessions: &mut SessionFactory<'_>,
    gateway: &Gateway,
    options: &RuntimeOptions,
) -> TaskResult {
    let mark = gateway.mark();
    let mut result = TaskResult {
        request: request.to_string(),
        status: TaskStatus::Failed,
        trace: None,
        tokens: TokenLedger::default(),
        library_updated: false,
        api_id: None,
        bindings: Bindings::new(),
        notes: Vec::new(),
    };
    let finish = |mut r: TaskResult| {
        r.tokens = gateway.ledger_since(mark);
        r
    };

    let matched = match retrieve_and_fill(request, store, gateway) {
        Ok(m) => m,
        Err(e) => {
            result.notes.push(format!("retrieval: {e}"));
            ApiMatch::no_match()
        }
    };
    let mut website = options.website.clone();
    if let (Confidence::Match, Some(id)) = (matched.confidence, &matched.api_id) {
        let record = store.get(id).expect("matched ids come from the store");
        website = record.api.website.clone();
        result.api_id = Some(id.clone());
        result.bindings = matched.bindings.clone();
        if record.stale {
            result.notes.push(format!("api {id} is stale"));
        } else {
            let api = record.api.clone();
            let outcome = sessions().map_err(|e| e.to_string()).and_then(|mut s| {
                let r = execute_api(&api, &matched.bindings, s.as_mut());
                let _ = s.close();
                r.map_err(|e| match e {
                    ExecuteApiError::StepFailed { index, trace } => {
                        result.trace = Some(trace);
                        format!("step {index} failed")
                    }
                    other => other.to_string(),
                })
            });
            match outcome {
                Ok(trace) => {
                    if let Err(e) = store.record_execution_outcome(id, Outcome::Success) {
                        result.notes.push(e.to_string());
                    }
                    result.trace = Some(trace);
                    result.status = TaskStatus::CompletedViaApi;
                    return finish(result);
                }
                Err(e) => {
                    result.notes.push(format!("executing {id}: {e}"));
                    if let Err(e) = store.record_execution_outcome(id, Outcome::Failure) {
                        result.notes.push(e.to_string());
                    }
                }
            }
        }
    }

    let mut session = match sessions() {
        Ok(s) => s,
        Err(e) => {
            result.notes.push(format!("opening session: {e}"));
            return finish(result);
        }
    };
    let explored = unravel_run(request, &website, session.as_mut(), gateway, options.unravel);
    let _ = session.close();
    match explored {
        Ok((trace, script)) => {
            result.trace = Some(trace);
            result.status = TaskStatus::CompletedViaUnravel;
            match integrate_trace(request, &script, store, gateway, ApiSource::Unravel) {
                Ok(i) => {
                    result.library_updated = i.kind != IntegrationKind::Unchanged;
                    result.api_id = Some(i.api_id);
                }
                Err(e) => result.notes.push(format!("integrating trace: {e}")),
            }
        }
        Err(e) => {
            result.notes.push(e.to_string());
            result.trace = Some(*e.trace);
        }
    }
    finish(result)
}
