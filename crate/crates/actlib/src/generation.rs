//! Script generation: one-shot against distilled elements, or incremental
//! page-by-page exploration that executes as it goes.

use actlib_core::dsl::ScriptDocument;
use actlib_core::validate::validate_step;
use actlib_core::{validate_script, ActionScript, ActionStep, Locator, ValidationReport};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::DistilledPage;
use crate::executor::{execute_step, ExecutionTrace, Session, StepStatus};
use crate::gateway::prompts::{self, Prompt};
use crate::gateway::{digest, digest_json, extract_json, Gateway, GatewayError, Tag};
use crate::html::Dom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct StepChunk {
    #[serde(default)]
    pub steps: Vec<ActionStep>,
    pub done: bool,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct HistoryEntry {
    pub step: ActionStep,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnravelState {
    pub goal: String,
    pub website: String,
    pub history: Vec<HistoryEntry>,
    pub page_count: u32,
    pub step_count: u32,
}

impl UnravelState {
    pub fn new(goal: impl Into<String>, website: impl Into<String>) -> Self {
        Self { goal: goal.into(), website: website.into(), ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Limits {
    pub max_pages: u32,
    pub max_steps: u32,
    /// Re-prompts allowed after a failed step before giving up.
    pub max_retries: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_pages: 10, max_steps: 40, max_retries: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnravelOptions {
    pub limits: Limits,
    /// Strip script/style/comments from page HTML before prompting.
    pub prune_html: bool,
}

impl Default for UnravelOptions {
    fn default() -> Self {
        Self { limits: Limits::default(), prune_html: true }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unusable LLM reply after retry: {0}")]
    LlmReplyUnparseable(String),
    #[error("script references locator {} {:?} outside the distilled elements", .0.strategy.as_str(), .0.value)]
    UngroundedLocator(Locator),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    LimitsExceeded,
    StepFailedAfterRetries,
    GatewayError,
    LlmReplyUnparseable,
    EmptyResult,
}

#[derive(Debug, Error)]
#[error("exploration failed ({reason:?}): {detail}")]
pub struct ExplorationFailed {
    pub reason: FailureReason,
    pub detail: String,
    pub trace: Box<ExecutionTrace>,
}

fn parse_reply<T: for<'de> Deserialize<'de>>(reply: &str) -> Result<T, String> {
    let body = extract_json(reply).ok_or("no JSON object in reply")?;
    serde_json::from_str(body).map_err(|e| e.to_string())
}

fn check_steps(steps: &[ActionStep]) -> Result<(), String> {
    let mut report = ValidationReport::default();
    for (i, s) in steps.iter().enumerate() {
        validate_step(i, s, &mut report);
    }
    if !report.is_ok() {
        return Err(report.to_string());
    }
    if let Some(p) = steps.iter().find_map(ActionStep::param_ref) {
        return Err(format!("parameter reference {p:?} in a concrete script"));
    }
    Ok(())
}

fn feedback_line(err: &str) -> String {
    format!("\nYour previous reply was rejected: {err}. Reply again following the format exactly.")
}

// ---------------------------------------------------------------- dist-map

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct ElementListing<'a> {
    page_id: &'a str,
    elements: Vec<ListedElement<'a>>,
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct ListedElement<'a> {
    element_key: &'a str,
    role: crate::distill::ElementRole,
    label: &'a str,
    locators: &'a actlib_core::LocatorChain,
}

enum Rejection {
    Unparseable(String),
    Ungrounded(Locator),
}

/// Generates a literal script using only locators from the verified pages.
pub fn distmap_generate(
    task: &str,
    website: &str,
    pages: &[DistilledPage],
    gateway: &Gateway,
) -> Result<ActionScript, GenError> {
    if task.trim().is_empty() {
        return Err(GenError::Precondition("empty task".into()));
    }
    if let Some(p) = pages.iter().find(|p| !p.verified) {
        return Err(GenError::Precondition(format!("page {} is not verified", p.page_id)));
    }
    let listing: Vec<ElementListing> = pages
        .iter()
        .map(|p| ElementListing {
            page_id: &p.page_id,
            elements: p.elements.iter().map(ElementListing::item).collect(),
        })
        .collect();
    let elements = serde_json::to_string_pretty(&listing).expect("listing serializes");
    let grounded: Vec<&Locator> = pages.iter().flat_map(|p| &p.elements).flat_map(|e| e.locators.iter()).collect();
    let pages_digest = digest_json(pages);

    let mut feedback = String::new();
    let mut last = Rejection::Unparseable(String::new());
    for attempt in 1..=2 {
        let prompt = prompts::render(
            prompts::DISTMAP_GENERATE,
            &[("website", website), ("task", task), ("elements", &elements), ("feedback", &feedback)],
            &[("task", task.to_string()), ("pages", pages_digest.clone())],
        )
        .with_attempt(attempt);
        let reply = gateway.complete(&prompt, &[Tag::StepPrompt])?;
        let parsed = parse_reply::<ScriptDocument>(&reply).map_err(Rejection::Unparseable).and_then(|doc| {
            let mut script: ActionScript = doc.into();
            script.website = website.into();
            script.task_description = task.into();
            let report = validate_script(&script);
            if !report.is_ok() {
                return Err(Rejection::Unparseable(report.to_string()));
            }
            check_steps(&script.steps).map_err(Rejection::Unparseable)?;
            if let Some(l) = script.steps.iter().flat_map(|s| s.locators()).find(|l| !grounded.contains(l)) {
                return Err(Rejection::Ungrounded(l.clone()));
            }
            Ok(script)
        });
        match parsed {
            Ok(script) => return Ok(script),
            Err(r) => {
                let msg = match &r {
                    Rejection::Unparseable(m) => m.clone(),
                    Rejection::Ungrounded(l) => format!(
                        "locator {} {:?} is not in the element list; copy locators exactly",
                        l.strategy.as_str(),
                        l.value
                    ),
                };
                log::warn!("distmap-generate reply rejected: {msg}");
                feedback = feedback_line(&msg);
                last = r;
            }
        }
    }
    Err(match last {
        Rejection::Unparseable(m) => GenError::LlmReplyUnparseable(m),
        Rejection::Ungrounded(l) => GenError::UngroundedLocator(l),
    })
}

impl<'a> ElementListing<'a> {
    fn item(e: &'a crate::distill::DistilledElement) -> ListedElement<'a> {
        ListedElement { element_key: &e.element_key, role: e.role, label: &e.label, locators: &e.locators }
    }
}

// ---------------------------------------------------------------- unravel

fn render_history(history: &[HistoryEntry]) -> String {
    if history.is_empty() {
        return "(none)".into();
    }
    history
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let step = serde_json::to_string(&h.step).expect("step serializes");
            let status = match h.status {
                StepStatus::Ok => "ok".to_string(),
                StepStatus::Failed => format!("FAILED: {}", h.note.as_deref().unwrap_or("unknown")),
            };
            format!("{}. {step} -> {status}", i + 1)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn unravel_prompt(state: &UnravelState, page_html: &str, feedback: &str) -> Prompt {
    prompts::render(
        prompts::UNRAVEL_STEP,
        &[
            ("goal", &state.goal),
            ("website", &state.website),
            ("history", &render_history(&state.history)),
            ("page_html", page_html),
            ("feedback", feedback),
        ],
        &[
            ("goal", state.goal.clone()),
            ("document", digest(page_html)),
            ("history-len", state.history.len().to_string()),
        ],
    )
}

/// Asks for the actions to take on the current page.
///
/// `current_html` is sent as given; callers prune it beforehand if wanted.
/// Steps whose locator chain resolves nothing on the page are rejected.
pub fn unravel_step(state: &UnravelState, current_html: &str, gateway: &Gateway) -> Result<StepChunk, GenError> {
    let dom = Dom::parse(current_html).map_err(|e| GenError::Precondition(e.to_string()))?;
    let mut feedback = String::new();
    let mut last = String::new();
    for attempt in 1..=2 {
        let prompt = unravel_prompt(state, current_html, &feedback).with_attempt(attempt);
        let reply = gateway.complete(&prompt, &[Tag::ContainsPageHtml, Tag::StepPrompt])?;
        let checked = parse_reply::<StepChunk>(&reply).and_then(|chunk| {
            if !chunk.done && chunk.steps.is_empty() {
                return Err("done is false but no steps were given".into());
            }
            check_steps(&chunk.steps)?;
            for (i, step) in chunk.steps.iter().enumerate() {
                if let Some(chain) = &step.target {
                    if !chain.iter().any(|l| !dom.resolve(l).is_empty()) {
                        return Err(format!("step {i} targets nothing on the current page"));
                    }
                }
            }
            Ok(chunk)
        });
        match checked {
            Ok(chunk) => return Ok(chunk),
            Err(e) => {
                log::warn!("unravel-step reply rejected: {e}");
                feedback = feedback_line(&e);
                last = e;
            }
        }
    }
    Err(GenError::LlmReplyUnparseable(last))
}

/// Explores the site from the session's current page until the LLM reports
/// the goal done, returning the trace and the script of successful steps.
pub fn unravel_run(
    task: &str,
    website: &str,
    session: &mut dyn Session,
    gateway: &Gateway,
    options: UnravelOptions,
) -> Result<(ExecutionTrace, ActionScript), ExplorationFailed> {
    let limits = options.limits;
    let start = session.current_url().unwrap_or_default();
    let mut trace = ExecutionTrace::begin(start);
    let mut state = UnravelState::new(task, website);
    let mut consecutive_failures = 0u32;

    let fail = |trace: &mut ExecutionTrace, session: &mut dyn Session, reason, detail: String| {
        trace.partial = true;
        trace.finish(session);
        ExplorationFailed { reason, detail, trace: Box::new(trace.clone()) }
    };

    'explore: loop {
        if state.page_count >= limits.max_pages {
            return Err(fail(
                &mut trace,
                session,
                FailureReason::LimitsExceeded,
                format!("page budget {} used up", limits.max_pages),
            ));
        }
        let html = match session.current_html() {
            Ok(h) => h,
            Err(e) => return Err(fail(&mut trace, session, FailureReason::StepFailedAfterRetries, e.to_string())),
        };
        let page_html = if options.prune_html {
            match Dom::parse(&html) {
                Ok(d) => d.pruned(),
                Err(e) => return Err(fail(&mut trace, session, FailureReason::LlmReplyUnparseable, e.to_string())),
            }
        } else {
            html
        };
        state.page_count += 1;
        let chunk = match unravel_step(&state, &page_html, gateway) {
            Ok(c) => c,
            Err(GenError::Gateway(e)) => {
                return Err(fail(&mut trace, session, FailureReason::GatewayError, e.to_string()))
            }
            Err(e) => return Err(fail(&mut trace, session, FailureReason::LlmReplyUnparseable, e.to_string())),
        };
        log::debug!("unravel chunk: {} steps, done={}", chunk.steps.len(), chunk.done);
        for step in &chunk.steps {
            if state.step_count >= limits.max_steps {
                return Err(fail(
                    &mut trace,
                    session,
                    FailureReason::LimitsExceeded,
                    format!("step budget {} used up", limits.max_steps),
                ));
            }
            let outcome = execute_step(session, step);
            state.step_count += 1;
            state.history.push(HistoryEntry { step: step.clone(), status: outcome.status, note: outcome.note.clone() });
            let ok = outcome.is_ok();
            trace.steps.push(outcome);
            if ok {
                consecutive_failures = 0;
            } else {
                consecutive_failures += 1;
                if consecutive_failures > limits.max_retries {
                    let detail = state.history.last().and_then(|h| h.note.clone()).unwrap_or_default();
                    return Err(fail(&mut trace, session, FailureReason::StepFailedAfterRetries, detail));
                }
                continue 'explore;
            }
        }
        if chunk.done {
            break;
        }
    }

    trace.finish(session);
    let steps: Vec<ActionStep> = trace.steps.iter().filter(|o| o.is_ok()).map(|o| o.step.clone()).collect();
    let script = ActionScript::new(website, task, steps);
    if !validate_script(&script).is_ok() {
        return Err(ExplorationFailed {
            reason: FailureReason::EmptyResult,
            detail: "exploration produced no executable steps".into(),
            trace: Box::new(trace),
        });
    }
    Ok((trace, script))
}
