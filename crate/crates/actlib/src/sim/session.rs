use std::collections::BTreeMap;

use actlib_core::{Locator, StepKind};
use ego_tree::NodeId;
use serde::{Deserialize, Serialize};

use super::{ClickMode, SimSite};
use crate::executor::{ElementHandle, Session, SessionError};
use crate::html::{AttrOverrides, Dom};

/// One accepted session action, sufficient to rebuild the session state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "action")]
pub enum LoggedAction {
    Open { url: String },
    Act { element: String, kind: StepKind, value: Option<String> },
    Navigate { url: String },
    Wait { seconds: f64 },
}

pub struct SimSession {
    site: SimSite,
    page_id: String,
    dom: Dom,
    generation: u64,
    registry: Vec<NodeId>,
    effects: BTreeMap<String, String>,
    overrides: AttrOverrides,
    clock: f64,
    log: Vec<LoggedAction>,
    closed: bool,
}

impl std::fmt::Debug for SimSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimSession")
            .field("site", &self.site.site_id)
            .field("page_id", &self.page_id)
            .field("effects", &self.effects)
            .finish_non_exhaustive()
    }
}

fn same_class(a: StepKind, b: StepKind) -> bool {
    let activate = |k| matches!(k, StepKind::Click | StepKind::Submit);
    a == b || (activate(a) && activate(b))
}

impl SimSession {
    pub fn new(site: SimSite) -> Self {
        let start = site.start_page.clone();
        let dom = Dom::parse(site.html(&start)).expect("validated site html parses");
        let url = site.start_url();
        Self {
            site,
            page_id: start,
            dom,
            generation: 0,
            registry: Vec::new(),
            effects: BTreeMap::new(),
            overrides: AttrOverrides::new(),
            clock: 0.0,
            log: vec![LoggedAction::Open { url }],
            closed: false,
        }
    }

    /// Rebuilds a session by applying `log` to a fresh session.
    pub fn replay(site: &SimSite, log: &[LoggedAction]) -> Result<Self, SessionError> {
        let mut s = Self::new(site.clone());
        for entry in log {
            match entry {
                LoggedAction::Open { url } => s.open(url)?,
                LoggedAction::Navigate { url } => s.navigate(url)?,
                LoggedAction::Wait { seconds } => s.wait(*seconds)?,
                LoggedAction::Act { element, kind, value } => {
                    let handle = s
                        .find(&Locator::by_css(element.clone()))?
                        .ok_or_else(|| SessionError::Rejected(format!("replay: {element} not found")))?;
                    s.act(&handle, *kind, value.as_deref())?;
                }
            }
        }
        Ok(s)
    }

    pub fn site(&self) -> &SimSite {
        &self.site
    }

    pub fn page_id(&self) -> &str {
        &self.page_id
    }

    pub fn effects(&self) -> &BTreeMap<String, String> {
        &self.effects
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn log(&self) -> &[LoggedAction] {
        &self.log
    }

    pub fn check_goal(&self, goal: &str) -> Result<bool, super::SimError> {
        self.site.check_goal(self, goal)
    }

    fn goto(&mut self, page_id: &str) {
        self.page_id = page_id.to_string();
        self.dom = Dom::parse(self.site.html(page_id)).expect("validated site html parses");
        self.generation += 1;
        self.registry.clear();
        self.overrides.clear();
    }

    fn live(&self) -> Result<(), SessionError> {
        if self.closed {
            Err(SessionError::Closed)
        } else {
            Ok(())
        }
    }

    fn node_of(&self, handle: &ElementHandle) -> Result<NodeId, SessionError> {
        let stale = || SessionError::StaleHandle(handle.0.clone());
        let (gen, idx) = handle.0.split_once(':').ok_or_else(stale)?;
        if gen.parse::<u64>().ok() != Some(self.generation) {
            return Err(stale());
        }
        let idx: usize = idx.parse().map_err(|_| stale())?;
        self.registry.get(idx).copied().ok_or_else(stale)
    }

    /// Attribute of a live element, reflecting entered values.
    pub fn element_attr(&self, handle: &ElementHandle, name: &str) -> Result<Option<String>, SessionError> {
        let node = self.node_of(handle)?;
        if let Some(v) = self.overrides.get(&node).and_then(|o| o.get(name)) {
            return Ok(v.clone());
        }
        let el = self.dom.element(node).expect("registered node");
        Ok(el.value().attr(name).map(str::to_string))
    }

    pub fn element_tag(&self, handle: &ElementHandle) -> Result<String, SessionError> {
        let node = self.node_of(handle)?;
        Ok(self.dom.element(node).expect("registered node").value().name().to_string())
    }

    pub fn is_selected(&self, handle: &ElementHandle) -> Result<bool, SessionError> {
        Ok(self.is_checked(self.node_of(handle)?))
    }

    fn is_checkable(&self, node: NodeId) -> bool {
        let el = self.dom.element(node).expect("registered node");
        let v = el.value();
        v.name() == "input"
            && v.attr("type").is_some_and(|t| t.eq_ignore_ascii_case("checkbox") || t.eq_ignore_ascii_case("radio"))
    }

    fn is_checked(&self, node: NodeId) -> bool {
        match self.overrides.get(&node).and_then(|o| o.get("checked")) {
            Some(v) => v.is_some(),
            None => self.dom.element(node).is_some_and(|e| e.value().attr("checked").is_some()),
        }
    }

    fn record_field(&mut self, node: NodeId, value: &str) -> Result<(), SessionError> {
        let el = self.dom.element(node).expect("registered node");
        let v = el.value();
        let tag = v.name();
        if !matches!(tag, "input" | "textarea" | "select") {
            return Err(SessionError::Rejected(format!("cannot enter text into <{tag}>")));
        }
        let key = v.attr("name").or(v.attr("id")).map(str::to_string).unwrap_or_else(|| self.dom.css_path(node));
        let checkable = self.is_checkable(node);
        let attrs = self.overrides.entry(node).or_default();
        let recorded = if checkable {
            let on = matches!(value.trim().to_ascii_lowercase().as_str(), "true" | "on" | "yes" | "1");
            attrs.insert("checked".into(), on.then(String::new));
            on.to_string()
        } else {
            attrs.insert("value".into(), Some(value.to_string()));
            value.to_string()
        };
        self.effects.insert(key, recorded);
        Ok(())
    }
}

impl Session for SimSession {
    fn open(&mut self, start_url: &str) -> Result<(), SessionError> {
        let page = match self.site.page_for_url(start_url) {
            Some(p) => p.to_string(),
            None => {
                if !start_url.is_empty() {
                    log::warn!("sim {}: unknown start url {start_url}, using start page", self.site.site_id);
                }
                self.site.start_page.clone()
            }
        };
        self.effects.clear();
        self.clock = 0.0;
        self.closed = false;
        self.goto(&page);
        self.log = vec![LoggedAction::Open { url: start_url.into() }];
        Ok(())
    }

    fn current_html(&mut self) -> Result<String, SessionError> {
        self.live()?;
        Ok(self.dom.serialize_with(false, Some(&self.overrides)))
    }

    fn current_page_id(&mut self) -> Result<String, SessionError> {
        self.live()?;
        Ok(self.page_id.clone())
    }

    fn current_url(&mut self) -> Result<String, SessionError> {
        self.live()?;
        Ok(self.site.url_of(&self.page_id))
    }

    fn find(&mut self, locator: &Locator) -> Result<Option<ElementHandle>, SessionError> {
        self.live()?;
        let Some(node) = self.dom.resolve_first(locator) else {
            return Ok(None);
        };
        let idx = match self.registry.iter().position(|n| *n == node) {
            Some(i) => i,
            None => {
                self.registry.push(node);
                self.registry.len() - 1
            }
        };
        Ok(Some(ElementHandle(format!("{}:{idx}", self.generation))))
    }

    fn act(&mut self, handle: &ElementHandle, kind: StepKind, value: Option<&str>) -> Result<(), SessionError> {
        self.live()?;
        let node = self.node_of(handle)?;
        let element = self.dom.css_path(node);
        let value_str = value.unwrap_or_default();
        match kind {
            StepKind::Input | StepKind::SelectOption => self.record_field(node, value_str)?,
            StepKind::Click if self.is_checkable(node) => {
                let next = if self.is_checked(node) { "false" } else { "true" };
                self.record_field(node, next)?;
            }
            StepKind::Click | StepKind::Submit => {}
            StepKind::Navigate | StepKind::Wait => {
                return Err(SessionError::Rejected(format!("{} takes no element", kind.as_str())))
            }
        }
        let page = &self.site.pages[&self.page_id];
        let fired = page.transitions.iter().find(|t| {
            same_class(t.on, kind)
                && self.dom.resolve(&t.trigger).contains(&node)
                && if t.fields.is_empty() {
                    t.predicate.accepts(value_str)
                } else {
                    t.fields
                        .iter()
                        .all(|f| t.predicate.accepts(self.effects.get(f).map(String::as_str).unwrap_or_default()))
                }
        });
        match fired.cloned() {
            Some(t) => {
                self.effects.extend(t.effects);
                self.goto(&t.next);
            }
            None if matches!(kind, StepKind::Click | StepKind::Submit) && self.site.click_mode == ClickMode::Strict => {
                return Err(SessionError::Rejected(format!("no transition for {} on {element}", kind.as_str())));
            }
            None => {}
        }
        self.log.push(LoggedAction::Act { element, kind, value: value.map(str::to_string) });
        Ok(())
    }

    fn navigate(&mut self, url: &str) -> Result<(), SessionError> {
        self.live()?;
        let page =
            self.site.page_for_url(url).ok_or_else(|| SessionError::Rejected(format!("no page at {url}")))?.to_string();
        self.goto(&page);
        self.log.push(LoggedAction::Navigate { url: url.into() });
        Ok(())
    }

    fn wait(&mut self, seconds: f64) -> Result<(), SessionError> {
        self.live()?;
        self.clock += seconds.max(0.0);
        self.log.push(LoggedAction::Wait { seconds });
        Ok(())
    }

    fn close(&mut self) -> Result<(), SessionError> {
        self.closed = true;
        Ok(())
    }
}
