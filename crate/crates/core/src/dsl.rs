//! The portable action language.
//!
//! Scripts are ordered lists of typed steps. Targets are [`LocatorChain`]s:
//! alternatives are tried in order and the first one that resolves receives
//! the action. Values are either literals or references to declared
//! parameters, which is what makes an [`ActionApi`] reusable.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::SCHEMA_VERSION;

/// How a [`Locator`] finds an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    ById,
    ByName,
    ByCss,
    ByXpath,
    ByText,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::ById, Strategy::ByName, Strategy::ByCss, Strategy::ByXpath, Strategy::ByText];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ById => "by-id",
            Strategy::ByName => "by-name",
            Strategy::ByCss => "by-css",
            Strategy::ByXpath => "by-xpath",
            Strategy::ByText => "by-text",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Locator {
    pub strategy: Strategy,
    pub value: String,
}

impl Locator {
    pub fn new(strategy: Strategy, value: impl Into<String>) -> Self {
        Self { strategy, value: value.into() }
    }

    pub fn by_id(value: impl Into<String>) -> Self {
        Self::new(Strategy::ById, value)
    }

    pub fn by_name(value: impl Into<String>) -> Self {
        Self::new(Strategy::ByName, value)
    }

    pub fn by_css(value: impl Into<String>) -> Self {
        Self::new(Strategy::ByCss, value)
    }

    pub fn by_xpath(value: impl Into<String>) -> Self {
        Self::new(Strategy::ByXpath, value)
    }

    pub fn by_text(value: impl Into<String>) -> Self {
        Self::new(Strategy::ByText, value)
    }
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={:?}", self.strategy, self.value)
    }
}

/// Ordered fallback list of locators; the first alternative that resolves wins.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocatorChain(pub Vec<Locator>);

impl LocatorChain {
    pub fn single(locator: Locator) -> Self {
        Self(alloc::vec![locator])
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Locator> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<&Locator> {
        self.0.first()
    }

    pub fn contains(&self, locator: &Locator) -> bool {
        self.0.contains(locator)
    }
}

impl From<Vec<Locator>> for LocatorChain {
    fn from(v: Vec<Locator>) -> Self {
        Self(v)
    }
}

impl<'a> IntoIterator for &'a LocatorChain {
    type Item = &'a Locator;
    type IntoIter = core::slice::Iter<'a, Locator>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ValueExpr {
    Literal { literal: String },
    ParamRef { param: String },
}

impl ValueExpr {
    pub fn literal(s: impl Into<String>) -> Self {
        ValueExpr::Literal { literal: s.into() }
    }

    pub fn param(name: impl Into<String>) -> Self {
        ValueExpr::ParamRef { param: name.into() }
    }

    pub fn as_literal(&self) -> Option<&str> {
        match self {
            ValueExpr::Literal { literal } => Some(literal),
            ValueExpr::ParamRef { .. } => None,
        }
    }

    pub fn as_param(&self) -> Option<&str> {
        match self {
            ValueExpr::ParamRef { param } => Some(param),
            ValueExpr::Literal { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Navigate,
    Click,
    Input,
    SelectOption,
    Submit,
    Wait,
}

impl StepKind {
    pub const ALL: [StepKind; 6] = [
        StepKind::Navigate,
        StepKind::Click,
        StepKind::Input,
        StepKind::SelectOption,
        StepKind::Submit,
        StepKind::Wait,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Navigate => "navigate",
            StepKind::Click => "click",
            StepKind::Input => "input",
            StepKind::SelectOption => "select-option",
            StepKind::Submit => "submit",
            StepKind::Wait => "wait",
        }
    }

    pub fn needs_target(self) -> bool {
        !matches!(self, StepKind::Navigate | StepKind::Wait)
    }

    pub fn needs_value(self) -> bool {
        matches!(self, StepKind::Navigate | StepKind::Input | StepKind::SelectOption)
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One action. Which optional fields are present depends on `kind`:
///
/// | kind          | target | value | wait-seconds |
/// |---------------|--------|-------|--------------|
/// | navigate      | -      | yes   | -            |
/// | click         | yes    | -     | -            |
/// | input         | yes    | yes   | -            |
/// | select-option | yes    | yes   | -            |
/// | submit        | yes    | -     | -            |
/// | wait          | -      | -     | yes          |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ActionStep {
    pub kind: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<LocatorChain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<ValueExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wait_seconds: Option<f64>,
}

impl ActionStep {
    pub fn navigate(url: ValueExpr) -> Self {
        Self { kind: StepKind::Navigate, target: None, value: Some(url), wait_seconds: None }
    }

    pub fn click(target: impl Into<LocatorChain>) -> Self {
        Self { kind: StepKind::Click, target: Some(target.into()), value: None, wait_seconds: None }
    }

    pub fn submit(target: impl Into<LocatorChain>) -> Self {
        Self { kind: StepKind::Submit, target: Some(target.into()), value: None, wait_seconds: None }
    }

    pub fn input(target: impl Into<LocatorChain>, value: ValueExpr) -> Self {
        Self { kind: StepKind::Input, target: Some(target.into()), value: Some(value), wait_seconds: None }
    }

    pub fn select_option(target: impl Into<LocatorChain>, value: ValueExpr) -> Self {
        Self { kind: StepKind::SelectOption, target: Some(target.into()), value: Some(value), wait_seconds: None }
    }

    pub fn wait(seconds: f64) -> Self {
        Self { kind: StepKind::Wait, target: None, value: None, wait_seconds: Some(seconds) }
    }

    pub fn param_ref(&self) -> Option<&str> {
        self.value.as_ref().and_then(ValueExpr::as_param)
    }

    pub fn literal(&self) -> Option<&str> {
        self.value.as_ref().and_then(ValueExpr::as_literal)
    }

    pub fn locators(&self) -> impl Iterator<Item = &Locator> {
        self.target.iter().flat_map(|c| c.iter())
    }
}

impl From<Locator> for LocatorChain {
    fn from(l: Locator) -> Self {
        LocatorChain::single(l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueType {
    String,
    Date,
    Boolean,
    Integer,
}

impl ValueType {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Date => "date",
            ValueType::Boolean => "boolean",
            ValueType::Integer => "integer",
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub value_type: ValueType,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl ParamSpec {
    pub fn required(name: impl Into<String>, value_type: ValueType) -> Self {
        Self { name: name.into(), value_type, required: true, default: None }
    }

    pub fn optional(name: impl Into<String>, value_type: ValueType, default: Option<&str>) -> Self {
        Self { name: name.into(), value_type, required: false, default: default.map(ToString::to_string) }
    }
}

/// A concrete (or partially parameterized) step sequence for one task on one website.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ActionScript {
    pub website: String,
    pub task_description: String,
    pub steps: Vec<ActionStep>,
    #[serde(default)]
    pub declared_params: Vec<ParamSpec>,
}

impl ActionScript {
    pub fn new(website: impl Into<String>, task: impl Into<String>, steps: Vec<ActionStep>) -> Self {
        Self { website: website.into(), task_description: task.into(), steps, declared_params: Vec::new() }
    }

    pub fn has_param_refs(&self) -> bool {
        self.steps.iter().any(|s| s.param_ref().is_some())
    }
}

/// A parameterized, reusable step sequence cached in the library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ActionApi {
    pub api_id: String,
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub steps: Vec<ActionStep>,
    pub website: String,
}

impl ActionApi {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Root-level serialized form of an [`ActionScript`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScriptDocument {
    pub schema_version: u32,
    pub website: String,
    pub task_description: String,
    pub steps: Vec<ActionStep>,
    #[serde(default)]
    pub declared_params: Vec<ParamSpec>,
}

impl From<ActionScript> for ScriptDocument {
    fn from(s: ActionScript) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            website: s.website,
            task_description: s.task_description,
            steps: s.steps,
            declared_params: s.declared_params,
        }
    }
}

impl From<ScriptDocument> for ActionScript {
    fn from(d: ScriptDocument) -> Self {
        Self {
            website: d.website,
            task_description: d.task_description,
            steps: d.steps,
            declared_params: d.declared_params,
        }
    }
}

/// Root-level serialized form of an [`ActionApi`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ApiDocument {
    pub schema_version: u32,
    pub api_id: String,
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub steps: Vec<ActionStep>,
    pub website: String,
}

impl From<ActionApi> for ApiDocument {
    fn from(a: ActionApi) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            api_id: a.api_id,
            name: a.name,
            description: a.description,
            params: a.params,
            steps: a.steps,
            website: a.website,
        }
    }
}

impl From<ApiDocument> for ActionApi {
    fn from(d: ApiDocument) -> Self {
        Self {
            api_id: d.api_id,
            name: d.name,
            description: d.description,
            params: d.params,
            steps: d.steps,
            website: d.website,
        }
    }
}

/// `[A-Za-z_][A-Za-z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_expr_wire_form() {
        let lit = serde_json::to_string(&ValueExpr::literal("Seattle")).unwrap();
        assert_eq!(lit, r#"{"kind":"literal","literal":"Seattle"}"#);
        let p = serde_json::to_string(&ValueExpr::param("origin")).unwrap();
        assert_eq!(p, r#"{"kind":"param-ref","param":"origin"}"#);
    }

    #[test]
    fn step_omits_absent_fields() {
        let s = ActionStep::click(Locator::by_id("headPrimary3"));
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"click","target":[{"strategy":"by-id","value":"headPrimary3"}]}"#);
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = r#"{"kind":"click","target":[],"color":"red"}"#;
        assert!(serde_json::from_str::<ActionStep>(bad).is_err());
        let bad_value = r#"{"kind":"literal","literal":"x","extra":1}"#;
        assert!(serde_json::from_str::<ValueExpr>(bad_value).is_err());
        let bad_doc =
            r#"{"schema-version":1,"website":"w","task-description":"t","steps":[],"declared-params":[],"x":1}"#;
        assert!(serde_json::from_str::<ScriptDocument>(bad_doc).is_err());
    }

    #[test]
    fn identifiers() {
        assert!(is_identifier("use_miles"));
        assert!(is_identifier("_x1"));
        assert!(!is_identifier("1x"));
        assert!(!is_identifier(""));
        assert!(!is_identifier("depart-date"));
    }
}
