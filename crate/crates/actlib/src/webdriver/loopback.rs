//! In-process WebDriver endpoint backed by the site simulator, used to check
//! that the wire client and the simulator behave identically.

use std::collections::HashMap;
use std::io;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use actlib_core::{Locator, StepKind};
use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

use super::ELEMENT_KEY;
use crate::executor::{ElementHandle, Session, SessionError};
use crate::sim::{SimSession, SimSite};

pub struct LoopbackServer {
    url: String,
    server: Arc<Server>,
    worker: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    pub fn start(site: SimSite) -> io::Result<Self> {
        let server = Arc::new(Server::http("127.0.0.1:0").map_err(io::Error::other)?);
        let addr = server.server_addr().to_ip().ok_or_else(|| io::Error::other("loopback server has no ip address"))?;
        let srv = Arc::clone(&server);
        let worker = thread::spawn(move || serve(&srv, &site));
        Ok(Self { url: format!("http://{addr}"), server, worker: Some(worker) })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

type Reply = (u16, Value);

fn ok(value: Value) -> Reply {
    (200, json!({ "value": value }))
}

fn err(status: u16, code: &str, message: impl Into<String>) -> Reply {
    let message: String = message.into();
    (status, json!({"value": {"error": code, "message": message, "stacktrace": ""}}))
}

fn from_session_error(e: SessionError) -> Reply {
    match e {
        SessionError::Closed => err(404, "invalid session id", "session closed"),
        SessionError::StaleHandle(h) => err(404, "stale element reference", h),
        SessionError::Rejected(m) => err(400, "element not interactable", m),
        SessionError::Transport(m) => err(500, "unknown error", m),
    }
}

fn serve(server: &Server, site: &SimSite) {
    let mut sessions: HashMap<String, SimSession> = HashMap::new();
    let mut next_id = 0u64;
    for mut req in server.incoming_requests() {
        let mut body = String::new();
        let _ = req.as_reader().read_to_string(&mut body);
        let body: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
        let (status, reply) = route(&req, &body, site, &mut sessions, &mut next_id);
        respond(req, status, &reply);
    }
}

fn respond(req: Request, status: u16, body: &Value) {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let resp = Response::from_string(body.to_string()).with_status_code(status).with_header(header);
    if let Err(e) = req.respond(resp) {
        log::warn!("loopback respond failed: {e}");
    }
}

fn route(
    req: &Request,
    body: &Value,
    site: &SimSite,
    sessions: &mut HashMap<String, SimSession>,
    next_id: &mut u64,
) -> Reply {
    let path: Vec<&str> = req.url().trim_matches('/').split('/').collect();
    let method = req.method();
    if path == ["session"] && *method == Method::Post {
        *next_id += 1;
        let id = format!("sim-{next_id}");
        sessions.insert(id.clone(), site.open_session());
        return ok(json!({"sessionId": id, "capabilities": {"browserName": "actlib-sim"}}));
    }
    let ["session", sid, rest @ ..] = path.as_slice() else {
        return err(404, "unknown command", req.url());
    };
    if rest.is_empty() && *method == Method::Delete {
        return match sessions.remove(*sid) {
            Some(_) => ok(Value::Null),
            None => err(404, "invalid session id", *sid),
        };
    }
    let Some(s) = sessions.get_mut(*sid) else {
        return err(404, "invalid session id", *sid);
    };
    let text = |k: &str| body[k].as_str().unwrap_or_default().to_string();
    let result: Result<Value, SessionError> = match (method, rest) {
        (Method::Post, ["url"]) => s.navigate(&text("url")).map(|_| Value::Null),
        (Method::Get, ["url"]) => s.current_url().map(Value::from),
        (Method::Get, ["source"]) => s.current_html().map(Value::from),
        (Method::Post, ["element"]) => {
            let locator = match body["using"].as_str() {
                Some("css selector") => Locator::by_css(text("value")),
                Some("xpath") => Locator::by_xpath(text("value")),
                other => return err(400, "invalid argument", format!("unsupported strategy {other:?}")),
            };
            match s.find(&locator) {
                Ok(Some(h)) => Ok(json!({ ELEMENT_KEY: h.0 })),
                Ok(None) => return err(404, "no such element", locator.value),
                Err(e) => Err(e),
            }
        }
        (Method::Post, ["element", eid, action]) => {
            let h = ElementHandle(eid.to_string());
            match *action {
                "click" => s.act(&h, StepKind::Click, None),
                "clear" => s.element_tag(&h).map(drop),
                "value" => s.act(&h, StepKind::Input, Some(&text("text"))),
                _ => return err(404, "unknown command", req.url()),
            }
            .map(|_| Value::Null)
        }
        (Method::Get, ["element", eid, "selected"]) => s.is_selected(&ElementHandle(eid.to_string())).map(Value::from),
        (Method::Get, ["element", eid, "property", name]) => {
            s.element_attr(&ElementHandle(eid.to_string()), name).map(|v| v.map(Value::from).unwrap_or(Value::Null))
        }
        _ => return err(404, "unknown command", req.url()),
    };
    result.map(ok).unwrap_or_else(from_session_error)
}
