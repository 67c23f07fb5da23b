//! Backend-agnostic step execution with locator-chain fallback.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use actlib_core::{validate_script, ActionScript, ActionStep, Locator, StepKind, ValidationReport};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque element reference issued by [`Session::find`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ElementHandle(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("session is closed")]
    Closed,
    #[error("stale element handle {0}")]
    StaleHandle(String),
    #[error("action rejected: {0}")]
    Rejected(String),
    #[error("transport: {0}")]
    Transport(String),
}

/// A stateful browser-like session. One session is driven by one thread.
pub trait Session {
    fn open(&mut self, start_url: &str) -> Result<(), SessionError>;
    fn current_html(&mut self) -> Result<String, SessionError>;
    /// Page-state id for the simulator; the current URL for a real browser.
    fn current_page_id(&mut self) -> Result<String, SessionError>;
    fn current_url(&mut self) -> Result<String, SessionError>;
    fn find(&mut self, locator: &Locator) -> Result<Option<ElementHandle>, SessionError>;
    fn act(&mut self, handle: &ElementHandle, kind: StepKind, value: Option<&str>) -> Result<(), SessionError>;
    fn navigate(&mut self, url: &str) -> Result<(), SessionError>;
    fn wait(&mut self, seconds: f64) -> Result<(), SessionError>;
    fn close(&mut self) -> Result<(), SessionError>;
}

impl<S: Session + ?Sized> Session for Box<S> {
    fn open(&mut self, start_url: &str) -> Result<(), SessionError> {
        (**self).open(start_url)
    }
    fn current_html(&mut self) -> Result<String, SessionError> {
        (**self).current_html()
    }
    fn current_page_id(&mut self) -> Result<String, SessionError> {
        (**self).current_page_id()
    }
    fn current_url(&mut self) -> Result<String, SessionError> {
        (**self).current_url()
    }
    fn find(&mut self, locator: &Locator) -> Result<Option<ElementHandle>, SessionError> {
        (**self).find(locator)
    }
    fn act(&mut self, handle: &ElementHandle, kind: StepKind, value: Option<&str>) -> Result<(), SessionError> {
        (**self).act(handle, kind, value)
    }
    fn navigate(&mut self, url: &str) -> Result<(), SessionError> {
        (**self).navigate(url)
    }
    fn wait(&mut self, seconds: f64) -> Result<(), SessionError> {
        (**self).wait(seconds)
    }
    fn close(&mut self) -> Result<(), SessionError> {
        (**self).close()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Attempt {
    pub locator: Locator,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StepOutcome {
    pub step: ActionStep,
    pub status: StepStatus,
    pub attempts: Vec<Attempt>,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl StepOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == StepStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExecutionTrace {
    pub steps: Vec<StepOutcome>,
    pub start_url: String,
    pub end_page_id: Option<String>,
    pub partial: bool,
    pub started_at_ms: u64,
    pub ended_at_ms: u64,
}

impl ExecutionTrace {
    pub fn begin(start_url: impl Into<String>) -> Self {
        let now = now_ms();
        Self {
            steps: Vec::new(),
            start_url: start_url.into(),
            end_page_id: None,
            partial: false,
            started_at_ms: now,
            ended_at_ms: now,
        }
    }

    pub fn all_ok(&self) -> bool {
        self.steps.iter().all(StepOutcome::is_ok)
    }

    pub fn first_failure(&self) -> Option<usize> {
        self.steps.iter().position(|s| !s.is_ok())
    }

    pub fn finish(&mut self, session: &mut dyn Session) {
        self.end_page_id = session.current_page_id().ok();
        self.ended_at_ms = now_ms();
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid script: {0}")]
    Invalid(ValidationReport),
    #[error("script still contains parameter references")]
    UnresolvedParams,
    #[error("session closed")]
    SessionClosed,
}

/// Executes one step. Locators are tried in chain order; the first one that
/// resolves receives the action. Failures are reported in the outcome.
pub fn execute_step(session: &mut dyn Session, step: &ActionStep) -> StepOutcome {
    let started = Instant::now();
    let mut attempts = Vec::new();
    let result: Result<(), String> = (|| {
        if step.param_ref().is_some() {
            return Err(format!("unbound parameter {:?}", step.param_ref().unwrap_or_default()));
        }
        match step.kind {
            StepKind::Navigate => {
                let url = step.literal().ok_or("navigate without url")?;
                session.navigate(url).map_err(|e| e.to_string())
            }
            StepKind::Wait => session.wait(step.wait_seconds.unwrap_or(0.0)).map_err(|e| e.to_string()),
            kind => {
                let chain = step.target.as_ref().ok_or("step has no target")?;
                for locator in chain.iter() {
                    let found = session.find(locator).map_err(|e| {
                        attempts.push(Attempt { locator: locator.clone(), resolved: false });
                        e.to_string()
                    })?;
                    attempts.push(Attempt { locator: locator.clone(), resolved: found.is_some() });
                    if let Some(handle) = found {
                        return session.act(&handle, kind, step.literal()).map_err(|e| e.to_string());
                    }
                }
                Err("no locator in the chain resolved".into())
            }
        }
    })();
    let (status, note) = match result {
        Ok(()) => (StepStatus::Ok, None),
        Err(e) => (StepStatus::Failed, Some(e)),
    };
    StepOutcome { step: step.clone(), status, attempts, duration_ms: started.elapsed().as_millis() as u64, note }
}

/// Runs a fully substituted script in order.
pub fn run_script(
    session: &mut dyn Session,
    script: &ActionScript,
    stop_on_failure: bool,
) -> Result<ExecutionTrace, ExecError> {
    let report = validate_script(script);
    if !report.is_ok() {
        return Err(ExecError::Invalid(report));
    }
    if script.has_param_refs() {
        return Err(ExecError::UnresolvedParams);
    }
    let start = match session.current_url() {
        Ok(u) => u,
        Err(SessionError::Closed) => return Err(ExecError::SessionClosed),
        Err(e) => {
            log::warn!("cannot read start url: {e}");
            String::new()
        }
    };
    let mut trace = ExecutionTrace::begin(start);
    for step in &script.steps {
        let outcome = execute_step(session, step);
        let failed = !outcome.is_ok();
        trace.steps.push(outcome);
        if failed && stop_on_failure {
            trace.partial = true;
            break;
        }
    }
    trace.finish(session);
    Ok(trace)
}
