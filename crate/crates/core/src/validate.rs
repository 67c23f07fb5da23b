//! Well-formedness rules for scripts and APIs.
//!
//! Violations are data: validation never fails, it reports.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::dsl::{is_identifier, ActionApi, ActionScript, ActionStep, ParamSpec, StepKind};
use crate::params::check_value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    EmptySteps,
    MissingTarget,
    UnexpectedTarget,
    EmptyChain,
    EmptyLocatorValue,
    MissingValue,
    UnexpectedValue,
    MissingWaitSeconds,
    UnexpectedWaitSeconds,
    InvalidWaitSeconds,
    UndeclaredParamRef(String),
    UnreferencedRequiredParam(String),
    DuplicateParam(String),
    RequiredWithDefault(String),
    InvalidDefault(String),
    InvalidIdentifier(String),
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::EmptySteps => f.write_str("empty steps"),
            Rule::MissingTarget => f.write_str("missing target"),
            Rule::UnexpectedTarget => f.write_str("unexpected target"),
            Rule::EmptyChain => f.write_str("empty locator chain"),
            Rule::EmptyLocatorValue => f.write_str("empty locator value"),
            Rule::MissingValue => f.write_str("missing value"),
            Rule::UnexpectedValue => f.write_str("unexpected value"),
            Rule::MissingWaitSeconds => f.write_str("missing wait-seconds"),
            Rule::UnexpectedWaitSeconds => f.write_str("unexpected wait-seconds"),
            Rule::InvalidWaitSeconds => f.write_str("wait-seconds must be a non-negative number"),
            Rule::UndeclaredParamRef(p) => write!(f, "undeclared param-ref {p:?}"),
            Rule::UnreferencedRequiredParam(p) => write!(f, "required param {p:?} never referenced"),
            Rule::DuplicateParam(p) => write!(f, "duplicate param {p:?}"),
            Rule::RequiredWithDefault(p) => write!(f, "required param {p:?} has a default"),
            Rule::InvalidDefault(p) => write!(f, "default of param {p:?} does not match its type"),
            Rule::InvalidIdentifier(p) => write!(f, "{p:?} is not an identifier"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Index of the offending step, when the rule is step-local.
    pub step: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(i) => write!(f, "step {i}: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, pred: impl Fn(&Rule) -> bool) -> bool {
        self.violations.iter().any(|v| pred(&v.rule))
    }

    fn push(&mut self, step: Option<usize>, rule: Rule) {
        self.violations.push(Violation { step, rule });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_script(script: &ActionScript) -> ValidationReport {
    validate_parts(&script.steps, &script.declared_params)
}

pub fn validate_api(api: &ActionApi) -> ValidationReport {
    let mut report = validate_parts(&api.steps, &api.params);
    if !is_identifier(&api.name) {
        report.push(None, Rule::InvalidIdentifier(api.name.clone()));
    }
    report
}

/// Step-local rules only; used for chunks that carry no parameter declarations.
pub fn validate_step(index: usize, step: &ActionStep, report: &mut ValidationReport) {
    let kind = step.kind;
    match (&step.target, kind.needs_target()) {
        (None, true) => report.push(Some(index), Rule::MissingTarget),
        (Some(_), false) => report.push(Some(index), Rule::UnexpectedTarget),
        (Some(chain), true) => {
            if chain.is_empty() {
                report.push(Some(index), Rule::EmptyChain);
            }
            if chain.iter().any(|l| l.value.is_empty()) {
                report.push(Some(index), Rule::EmptyLocatorValue);
            }
        }
        (None, false) => {}
    }
    match (&step.value, kind.needs_value()) {
        (None, true) => report.push(Some(index), Rule::MissingValue),
        (Some(_), false) => report.push(Some(index), Rule::UnexpectedValue),
        _ => {}
    }
    match (step.wait_seconds, kind == StepKind::Wait) {
        (None, true) => report.push(Some(index), Rule::MissingWaitSeconds),
        (Some(_), false) => report.push(Some(index), Rule::UnexpectedWaitSeconds),
        (Some(s), true) if !(s.is_finite() && s >= 0.0) => report.push(Some(index), Rule::InvalidWaitSeconds),
        _ => {}
    }
}

fn validate_parts(steps: &[ActionStep], params: &[ParamSpec]) -> ValidationReport {
    let mut report = ValidationReport::default();
    if steps.is_empty() {
        report.push(None, Rule::EmptySteps);
    }

    let mut declared = BTreeSet::new();
    for p in params {
        if !is_identifier(&p.name) {
            report.push(None, Rule::InvalidIdentifier(p.name.clone()));
        }
        if !declared.insert(p.name.as_str()) {
            report.push(None, Rule::DuplicateParam(p.name.clone()));
        }
        match (&p.default, p.required) {
            (Some(_), true) => report.push(None, Rule::RequiredWithDefault(p.name.clone())),
            (Some(d), false) if check_value(p.value_type, d).is_err() => {
                report.push(None, Rule::InvalidDefault(p.name.clone()))
            }
            _ => {}
        }
    }

    let mut referenced = BTreeSet::new();
    for (i, step) in steps.iter().enumerate() {
        validate_step(i, step, &mut report);
        if let Some(name) = step.param_ref() {
            referenced.insert(name);
            if !declared.contains(name) {
                report.push(Some(i), Rule::UndeclaredParamRef(name.into()));
            }
        }
    }

    for p in params.iter().filter(|p| p.required) {
        if !referenced.contains(p.name.as_str()) {
            report.push(None, Rule::UnreferencedRequiredParam(p.name.clone()));
        }
    }
    report
}
