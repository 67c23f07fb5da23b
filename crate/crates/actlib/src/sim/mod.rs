//! Deterministic finite-state website simulator.
//!
//! Site spec file (JSON, `schema-version` 1):
//!
//! ```json
//! {
//!   "schema-version": 1,
//!   "site-id": "delta-like",
//!   "website": "delta.com",
//!   "start-page": "home",
//!   "click-mode": "inert",
//!   "pages": [
//!     {"page-id": "home", "url": "https://www.delta.com/", "html-file": "home.html",
//!      "transitions": [
//!        {"trigger": {"strategy": "by-id", "value": "go"}, "on": "click",
//!         "predicate": {"kind": "non-empty"}, "fields": ["q"], "next": "results",
//!         "effects": {"searched": "yes"}}
//!      ]}
//!   ],
//!   "goals": {"searched": {"page-id": "results", "required-effects": {"q": "*"}}}
//! }
//! ```
//!
//! A page carries either inline `html` or an `html-file` path relative to the
//! spec file. A required effect of `"*"` accepts any non-empty value.

mod session;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use actlib_core::{Locator, StepKind, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::html::Dom;

pub use session::{LoggedAction, SimSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClickMode {
    /// Unmatched clicks succeed and change nothing.
    #[default]
    Inert,
    /// Unmatched clicks fail.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ValuePredicate {
    #[default]
    Any,
    Equals {
        literal: String,
    },
    NonEmpty,
}

impl ValuePredicate {
    pub fn accepts(&self, value: &str) -> bool {
        match self {
            Self::Any => true,
            Self::Equals { literal } => value == literal,
            Self::NonEmpty => !value.trim().is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SimTransition {
    pub trigger: Locator,
    pub on: StepKind,
    #[serde(default)]
    pub predicate: ValuePredicate,
    /// Recorded fields the predicate is applied to; empty means the action's own value.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
    pub next: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub effects: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SimPage {
    pub page_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub html: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub html_file: Option<String>,
    #[serde(default)]
    pub transitions: Vec<SimTransition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Goal {
    pub page_id: String,
    #[serde(default)]
    pub required_effects: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SiteSpec {
    pub schema_version: u32,
    pub site_id: String,
    pub website: String,
    pub start_page: String,
    #[serde(default)]
    pub click_mode: ClickMode,
    pub pages: Vec<SimPage>,
    #[serde(default)]
    pub goals: BTreeMap<String, Goal>,
}

/// A validated site. Every page has its html inlined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimSite {
    pub site_id: String,
    pub website: String,
    pub start_page: String,
    pub click_mode: ClickMode,
    pub pages: BTreeMap<String, SimPage>,
    pub goals: BTreeMap<String, Goal>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot read site spec {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("site spec invalid: {}", .0.join("; "))]
    SpecInvalid(Vec<String>),
    #[error("unknown goal {0:?}")]
    UnknownGoal(String),
}

impl SimSite {
    pub fn page(&self, id: &str) -> Option<&SimPage> {
        self.pages.get(id)
    }

    pub fn html(&self, page_id: &str) -> &str {
        self.pages[page_id].html.as_deref().unwrap_or_default()
    }

    pub fn url_of(&self, page_id: &str) -> String {
        self.pages
            .get(page_id)
            .and_then(|p| p.url.clone())
            .unwrap_or_else(|| format!("sim://{}/{}", self.site_id, page_id))
    }

    pub fn start_url(&self) -> String {
        self.url_of(&self.start_page)
    }

    pub fn page_for_url(&self, url: &str) -> Option<&str> {
        self.pages.keys().find(|id| self.url_of(id) == url || id.as_str() == url).map(String::as_str)
    }

    /// Page ids reachable from the start page through transitions.
    pub fn reachable_pages(&self) -> BTreeSet<String> {
        let mut seen = BTreeSet::from([self.start_page.clone()]);
        let mut queue = VecDeque::from([self.start_page.clone()]);
        while let Some(id) = queue.pop_front() {
            for t in self.pages.get(&id).map(|p| p.transitions.as_slice()).unwrap_or_default() {
                if seen.insert(t.next.clone()) {
                    queue.push_back(t.next.clone());
                }
            }
        }
        seen
    }

    pub fn open_session(&self) -> SimSession {
        SimSession::new(self.clone())
    }

    pub fn check_goal(&self, session: &SimSession, goal: &str) -> Result<bool, SimError> {
        let g = self.goals.get(goal).ok_or_else(|| SimError::UnknownGoal(goal.into()))?;
        if session.page_id() != g.page_id {
            return Ok(false);
        }
        let effects = session.effects();
        Ok(g.required_effects.iter().all(|(k, want)| match effects.get(k) {
            Some(v) if want == "*" => !v.trim().is_empty(),
            Some(v) => v == want,
            None => false,
        }))
    }
}

/// Validates a parsed spec. `base` resolves `html-file` references.
pub fn build_site(spec: SiteSpec, base: Option<&Path>) -> Result<SimSite, SimError> {
    let mut problems = Vec::new();
    if spec.schema_version != SCHEMA_VERSION {
        problems.push(format!("unsupported schema-version {}", spec.schema_version));
    }
    let mut pages = BTreeMap::new();
    for mut page in spec.pages {
        match (&page.html, &page.html_file) {
            (Some(_), Some(_)) => problems.push(format!("page {}: both html and html-file", page.page_id)),
            (None, None) => problems.push(format!("page {}: no html", page.page_id)),
            (None, Some(file)) => {
                let path = base.map(|b| b.join(file)).unwrap_or_else(|| file.into());
                match fs::read_to_string(&path) {
                    Ok(text) => page.html = Some(text),
                    Err(e) => problems.push(format!("page {}: {}: {e}", page.page_id, path.display())),
                }
            }
            (Some(_), None) => {}
        }
        page.html_file = None;
        if pages.contains_key(&page.page_id) {
            problems.push(format!("duplicate page-id {}", page.page_id));
            continue;
        }
        pages.insert(page.page_id.clone(), page);
    }
    if !pages.contains_key(&spec.start_page) {
        problems.push(format!("start page {} does not exist", spec.start_page));
    }
    for page in pages.values() {
        let Some(html) = &page.html else { continue };
        let dom = match Dom::parse(html) {
            Ok(d) => d,
            Err(e) => {
                problems.push(format!("page {}: {e}", page.page_id));
                continue;
            }
        };
        for (i, t) in page.transitions.iter().enumerate() {
            if !pages.contains_key(&t.next) {
                problems.push(format!("page {} transition {i}: unknown next page {}", page.page_id, t.next));
            }
            if dom.resolve(&t.trigger).is_empty() {
                problems.push(format!(
                    "page {} transition {i}: trigger {} {:?} matches nothing",
                    page.page_id,
                    t.trigger.strategy.as_str(),
                    t.trigger.value
                ));
            }
            if matches!(t.on, StepKind::Navigate | StepKind::Wait) {
                problems.push(format!(
                    "page {} transition {i}: on {} has no trigger element",
                    page.page_id,
                    t.on.as_str()
                ));
            }
        }
    }
    for (name, g) in &spec.goals {
        if !pages.contains_key(&g.page_id) {
            problems.push(format!("goal {name}: unknown page {}", g.page_id));
        }
    }
    if !problems.is_empty() {
        return Err(SimError::SpecInvalid(problems));
    }
    Ok(SimSite {
        site_id: spec.site_id,
        website: spec.website,
        start_page: spec.start_page,
        click_mode: spec.click_mode,
        pages,
        goals: spec.goals,
    })
}

pub fn load_site_spec(path: impl AsRef<Path>) -> Result<SimSite, SimError> {
    let path = path.as_ref();
    let io = |reason: String| SimError::Io { path: path.display().to_string(), reason };
    let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    let spec: SiteSpec = serde_json::from_str(&text).map_err(|e| SimError::SpecInvalid(vec![e.to_string()]))?;
    build_site(spec, path.parent())
}

pub fn parse_site_spec(text: &str) -> Result<SimSite, SimError> {
    let spec: SiteSpec = serde_json::from_str(text).map_err(|e| SimError::SpecInvalid(vec![e.to_string()]))?;
    build_site(spec, None)
}
