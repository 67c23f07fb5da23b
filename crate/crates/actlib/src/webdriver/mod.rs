//! W3C WebDriver client implementing [`Session`].
//!
//! Endpoints used: new session, navigate to / get current URL, get page
//! source, find element (`css selector`, `xpath`), element click, clear,
//! send keys, is-selected, get property, delete session.

mod loopback;

use std::thread;
use std::time::Duration;

use actlib_core::{Locator, StepKind, Strategy};
use serde_json::{json, Value};

use crate::executor::{ElementHandle, Session, SessionError};
use crate::html::text_xpath;

pub use loopback::LoopbackServer;

pub const ENV_WEBDRIVER_URL: &str = "ACTLIB_WEBDRIVER_URL";

/// Key under which W3C element references are returned.
pub const ELEMENT_KEY: &str = "element-6066-11e4-a52e-4f735466cecf";

pub struct WebDriverSession {
    base: String,
    agent: ureq::Agent,
    session_id: Option<String>,
}

impl std::fmt::Debug for WebDriverSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WebDriverSession").field("base", &self.base).field("session_id", &self.session_id).finish()
    }
}

fn css_string(v: &str) -> String {
    let mut out = String::with_capacity(v.len() + 2);
    out.push('"');
    for c in v.chars() {
        match c {
            '"' | '\\' => {
                out.push('\\');
                out.push(c);
            }
            '\n' => out.push_str("\\a "),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Maps a DSL locator to a W3C `(using, value)` pair.
pub fn wire_locator(locator: &Locator) -> Option<(&'static str, String)> {
    let v = &locator.value;
    Some(match locator.strategy {
        Strategy::ById => ("css selector", format!("[id={}]", css_string(v))),
        Strategy::ByName => ("css selector", format!("[name={}]", css_string(v))),
        Strategy::ByCss => ("css selector", v.clone()),
        Strategy::ByXpath => ("xpath", v.clone()),
        Strategy::ByText => ("xpath", text_xpath(v)?),
    })
}

fn wire_error(status: u16, body: &Value) -> SessionError {
    let code = body["value"]["error"].as_str().unwrap_or_default();
    let message = body["value"]["message"].as_str().unwrap_or_default();
    match code {
        "invalid session id" => SessionError::Closed,
        "stale element reference" => SessionError::StaleHandle(message.into()),
        "element not interactable" | "invalid element state" | "element click intercepted" => {
            SessionError::Rejected(format!("{code}: {message}"))
        }
        _ => SessionError::Transport(format!("HTTP {status} {code}: {message}")),
    }
}

impl WebDriverSession {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self { base: base_url.trim_end_matches('/').to_string(), agent, session_id: None }
    }

    fn sid(&self) -> Result<&str, SessionError> {
        self.session_id.as_deref().ok_or(SessionError::Closed)
    }

    fn call(&self, method: &str, path: &str, body: Option<Value>) -> Result<Value, SessionError> {
        self.call_raw(method, path, body)?.map_err(|(status, body)| wire_error(status, &body))
    }

    /// Outer error: transport; inner error: a W3C error response.
    #[allow(clippy::type_complexity)]
    fn call_raw(
        &self,
        method: &str,
        path: &str,
        body: Option<Value>,
    ) -> Result<Result<Value, (u16, Value)>, SessionError> {
        let url = format!("{}{path}", self.base);
        let transport = |e: ureq::Error| SessionError::Transport(e.to_string());
        let mut resp = match (method, body) {
            ("GET", _) => self.agent.get(&url).call().map_err(transport)?,
            ("DELETE", _) => self.agent.delete(&url).call().map_err(transport)?,
            (_, body) => self.agent.post(&url).send_json(body.unwrap_or_else(|| json!({}))).map_err(transport)?,
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| SessionError::Transport(e.to_string()))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| SessionError::Transport(format!("bad response from {path}: {e}")))?;
        if status == 200 {
            Ok(Ok(value["value"].clone()))
        } else {
            Ok(Err((status, value)))
        }
    }

    fn session_call(&self, method: &str, rest: &str, body: Option<Value>) -> Result<Value, SessionError> {
        let path = format!("/session/{}{rest}", self.sid()?);
        self.call(method, &path, body)
    }

    fn element_call(
        &self,
        method: &str,
        h: &ElementHandle,
        rest: &str,
        body: Option<Value>,
    ) -> Result<Value, SessionError> {
        self.session_call(method, &format!("/element/{}{rest}", h.0), body)
    }
}

impl Session for WebDriverSession {
    fn open(&mut self, start_url: &str) -> Result<(), SessionError> {
        if self.session_id.is_none() {
            let v = self.call("POST", "/session", Some(json!({"capabilities": {"alwaysMatch": {}}})))?;
            let id = v["sessionId"]
                .as_str()
                .ok_or_else(|| SessionError::Transport("new session reply lacks sessionId".into()))?;
            self.session_id = Some(id.to_string());
        }
        self.navigate(start_url)
    }

    fn current_html(&mut self) -> Result<String, SessionError> {
        let v = self.session_call("GET", "/source", None)?;
        Ok(v.as_str().unwrap_or_default().to_string())
    }

    fn current_page_id(&mut self) -> Result<String, SessionError> {
        self.current_url()
    }

    fn current_url(&mut self) -> Result<String, SessionError> {
        let v = self.session_call("GET", "/url", None)?;
        Ok(v.as_str().unwrap_or_default().to_string())
    }

    fn find(&mut self, locator: &Locator) -> Result<Option<ElementHandle>, SessionError> {
        let Some((using, value)) = wire_locator(locator) else {
            return Ok(None);
        };
        let path = format!("/session/{}/element", self.sid()?);
        match self.call_raw("POST", &path, Some(json!({"using": using, "value": value})))? {
            Ok(v) => Ok(v[ELEMENT_KEY].as_str().map(|id| ElementHandle(id.to_string()))),
            Err((_, body))
                if matches!(body["value"]["error"].as_str(), Some("no such element" | "invalid selector")) =>
            {
                Ok(None)
            }
            Err((status, body)) => Err(wire_error(status, &body)),
        }
    }

    fn act(&mut self, h: &ElementHandle, kind: StepKind, value: Option<&str>) -> Result<(), SessionError> {
        match kind {
            StepKind::Click | StepKind::Submit => self.element_call("POST", h, "/click", None).map(drop),
            StepKind::Input | StepKind::SelectOption => {
                let text = value.unwrap_or_default();
                let ty = self.element_call("GET", h, "/property/type", None)?;
                if matches!(ty.as_str(), Some("checkbox" | "radio")) {
                    let want = matches!(text.trim().to_ascii_lowercase().as_str(), "true" | "on" | "yes" | "1");
                    let is = self.element_call("GET", h, "/selected", None)?.as_bool().unwrap_or(false);
                    if want != is {
                        self.element_call("POST", h, "/click", None)?;
                    }
                    return Ok(());
                }
                if kind == StepKind::Input {
                    self.element_call("POST", h, "/clear", None)?;
                }
                self.element_call("POST", h, "/value", Some(json!({"text": text}))).map(drop)
            }
            StepKind::Navigate | StepKind::Wait => {
                Err(SessionError::Rejected(format!("{} takes no element", kind.as_str())))
            }
        }
    }

    fn navigate(&mut self, url: &str) -> Result<(), SessionError> {
        self.session_call("POST", "/url", Some(json!({"url": url}))).map(drop)
    }

    fn wait(&mut self, seconds: f64) -> Result<(), SessionError> {
        thread::sleep(Duration::from_secs_f64(seconds.max(0.0)));
        Ok(())
    }

    fn close(&mut self) -> Result<(), SessionError> {
        if self.session_id.is_some() {
            let r = self.session_call("DELETE", "", None);
            self.session_id = None;
            r?;
        }
        Ok(())
    }
}

impl Drop for WebDriverSession {
    fn drop(&mut self) {
        if self.session_id.is_some() {
            let _ = self.close();
        }
    }
}
