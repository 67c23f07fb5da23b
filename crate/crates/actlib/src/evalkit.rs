//! Evaluation drivers: accuracy against annotated traces, token cost
//! comparison and rubric scoring by an LLM judge.
//!
//! Annotated-trace file (JSON):
//!
//! ```json
//! {
//!   "schema-version": 1,
//!   "task": "Find my trip ...",
//!   "pages": {"my-trips": "my-trips.html"},
//!   "steps": [
//!     {"page": "my-trips", "gold-element": "confirmation",
//!      "gold-locator": {"strategy": "by-id", "value": "confirmationNo"},
//!      "gold-action": "input", "gold-value": "DLTX7Y"}
//!   ]
//! }
//! ```
//!
//! `pages` maps page ids to HTML, given inline or as a path relative to the
//! file. A step's `page` and `gold-locator` are only needed for lenient
//! matching.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use actlib_core::metrics::{
    compare, AnnotatedStep, ComparisonReport, ElementMatcher, KeyMatcher, MetricError, PredictedElement, PredictedStep,
};
use actlib_core::tokens::{compare_costs, Baseline, CostComparison, CostError};
use actlib_core::{validate_script, ActionScript, ActionStep, Locator, StepKind, SCHEMA_VERSION};
use ego_tree::NodeId;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::executor::ExecutionTrace;
use crate::gateway::prompts::{render, RUBRIC};
use crate::gateway::{digest_json, Gateway, GatewayError, Tag, TokenLedger};
use crate::html::Dom;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("{0}")]
    Input(String),
    #[error("judge scores out of range: {0}")]
    ScoreOutOfRange(String),
    #[error("unusable judge reply: {0}")]
    LlmReplyUnparseable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GoldStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
    pub gold_element: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_locator: Option<Locator>,
    pub gold_action: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_value: Option<String>,
}

impl From<&GoldStep> for AnnotatedStep {
    fn from(g: &GoldStep) -> Self {
        AnnotatedStep {
            gold_element: g.gold_element.clone(),
            gold_locator: g.gold_locator.clone(),
            gold_action: g.gold_action,
            gold_value: g.gold_value.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AnnotatedTrace {
    pub schema_version: u32,
    #[serde(default)]
    pub task: String,
    #[serde(default)]
    pub pages: BTreeMap<String, String>,
    pub steps: Vec<GoldStep>,
}

impl AnnotatedTrace {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Input(format!("{}: {e}", path.display())))?;
        let mut trace: Self =
            serde_json::from_str(&text).map_err(|e| EvalError::Input(format!("{}: {e}", path.display())))?;
        if trace.schema_version != SCHEMA_VERSION {
            return Err(EvalError::Input(format!("unsupported schema-version {}", trace.schema_version)));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for html in trace.pages.values_mut() {
            if !html.trim_start().starts_with('<') {
                let file = base.join(&*html);
                *html =
                    std::fs::read_to_string(&file).map_err(|e| EvalError::Input(format!("{}: {e}", file.display())))?;
            }
        }
        Ok(trace)
    }

    pub fn gold(&self) -> Vec<AnnotatedStep> {
        self.steps.iter().map(AnnotatedStep::from).collect()
    }
}

/// Lenient matching: a prediction is right if its key equals the gold key or
/// any locator of its chain resolves to the gold element on the reference page.
pub struct ResolvingMatcher {
    pages: BTreeMap<String, Dom>,
    targets: BTreeMap<String, (String, NodeId)>,
}

impl std::fmt::Debug for ResolvingMatcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResolvingMatcher").field("targets", &self.targets.len()).finish_non_exhaustive()
    }
}

impl ResolvingMatcher {
    pub fn new(trace: &AnnotatedTrace) -> Result<Self, EvalError> {
        let mut pages = BTreeMap::new();
        for (id, html) in &trace.pages {
            let dom = Dom::parse(html).map_err(|e| EvalError::Input(format!("page {id}: {e}")))?;
            pages.insert(id.clone(), dom);
        }
        let mut targets = BTreeMap::new();
        for s in &trace.steps {
            let (Some(page), Some(loc)) = (&s.page, &s.gold_locator) else { continue };
            let dom =
                pages.get(page).ok_or_else(|| EvalError::Input(format!("step references unknown page {page}")))?;
            let node = dom.resolve_first(loc).ok_or_else(|| {
                EvalError::Input(format!("gold locator for {} matches nothing on {page}", s.gold_element))
            })?;
            targets.insert(s.gold_element.clone(), (page.clone(), node));
        }
        Ok(Self { pages, targets })
    }
}

impl ElementMatcher for ResolvingMatcher {
    fn matches(&self, predicted: &PredictedElement, gold: &AnnotatedStep) -> bool {
        if predicted.key.as_deref() == Some(gold.gold_element.as_str()) {
            return true;
        }
        let Some((page, node)) = self.targets.get(&gold.gold_element) else {
            return false;
        };
        let dom = &self.pages[page];
        predicted.locators.iter().any(|l| dom.resolve(l).contains(node))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Element keys must be equal.
    Exact,
    #[default]
    Lenient,
}

fn predicted_from_steps<'a>(steps: impl Iterator<Item = &'a ActionStep>) -> Vec<PredictedStep> {
    steps
        .map(|s| PredictedStep {
            element: s.target.as_ref().map(|chain| PredictedElement { key: None, locators: chain.clone() }),
            action: s.kind,
            value: s.literal().map(str::to_string),
        })
        .collect()
}

/// Reads predictions from a script document, an execution trace, or a plain
/// list of predicted steps.
pub fn parse_predictions(text: &str) -> Result<Vec<PredictedStep>, EvalError> {
    let value: Value = serde_json::from_str(text).map_err(|e| EvalError::Input(e.to_string()))?;
    if value.is_array() {
        return serde_json::from_value(value).map_err(|e| EvalError::Input(e.to_string()));
    }
    if value.get("schema-version").is_some() {
        let doc: actlib_core::dsl::ScriptDocument =
            serde_json::from_value(value).map_err(|e| EvalError::Input(e.to_string()))?;
        return Ok(predicted_from_steps(doc.steps.iter()));
    }
    let trace: ExecutionTrace = serde_json::from_value(value).map_err(|e| EvalError::Input(e.to_string()))?;
    Ok(predicted_from_steps(trace.steps.iter().map(|o| &o.step)))
}

pub fn evaluate(
    predicted: &[PredictedStep],
    gold: &AnnotatedTrace,
    mode: MatchMode,
) -> Result<ComparisonReport, EvalError> {
    let annotated = gold.gold();
    Ok(match mode {
        MatchMode::Exact => compare(predicted, &annotated, &KeyMatcher)?,
        MatchMode::Lenient => compare(predicted, &annotated, &ResolvingMatcher::new(gold)?)?,
    })
}

pub fn comparison_table(report: &ComparisonReport) -> String {
    let mut out = String::from("step  element  pair\n");
    for (i, v) in report.verdicts.iter().enumerate() {
        let mark = |b: bool| if b { "ok" } else { "--" };
        let _ = writeln!(out, "{:>4}  {:<7}  {}", i + 1, mark(v.element_ok), mark(v.step_ok));
    }
    let _ = writeln!(out, "element accuracy {} = {:.4}", report.element_correct, report.element_accuracy);
    let _ = writeln!(out, "step accuracy    {} = {:.4}", report.step_correct, report.step_accuracy);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TokenReport {
    #[serde(flatten)]
    pub comparison: CostComparison,
    pub reduction: f64,
    /// One decimal, e.g. "87.3%".
    pub reduction_percent: String,
}

fn percent(c: &CostComparison, decimals: u32) -> String {
    let scaled = c.reduction_percent_scaled(decimals);
    if decimals == 0 {
        return format!("{scaled}%");
    }
    let div = 10i128.pow(decimals);
    let sign = if scaled < 0 { "-" } else { "" };
    format!("{sign}{}.{:0w$}%", scaled.abs() / div, scaled.abs() % div, w = decimals as usize)
}

pub fn token_report(ledger: &TokenLedger, baseline: Baseline) -> Result<TokenReport, EvalError> {
    report_for_totals(ledger.total_tokens(), ledger.calls() as u64, ledger.any_estimated(), baseline)
}

pub fn report_for_totals(
    total: u64,
    calls: u64,
    estimated: bool,
    baseline: Baseline,
) -> Result<TokenReport, EvalError> {
    let comparison = compare_costs(total, calls, baseline, estimated)?;
    Ok(TokenReport { reduction: comparison.reduction(), reduction_percent: percent(&comparison, 1), comparison })
}

impl TokenReport {
    pub fn to_text(&self) -> String {
        let c = &self.comparison;
        let est = if c.estimated { " (estimated)" } else { "" };
        format!(
            "baseline: {} tokens/call x {} calls = {} tokens\nlibrary:  {} tokens over {} call(s){est}\nreduction: {} ({})\n",
            c.baseline.tokens_per_call,
            c.baseline.calls,
            c.baseline_total,
            c.library_total,
            c.library_calls,
            self.reduction_percent,
            percent(c, 0),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RubricScores {
    pub alignment: u8,
    pub fidelity: u8,
    pub efficiency: u8,
}

fn parse_scores(reply: &str) -> Result<RubricScores, EvalError> {
    let re = Regex::new(r"(\d+)\s*/\s*(\d+)\s*/\s*(\d+)").expect("static regex");
    let caps = re
        .captures(reply)
        .ok_or_else(|| EvalError::LlmReplyUnparseable(format!("no \"a / b / c\" scores in {reply:?}")))?;
    let n = |i: usize| caps[i].parse::<u32>().unwrap_or(u32::MAX);
    let (a, f, e) = (n(1), n(2), n(3));
    if [a, f, e].iter().any(|s| !(1..=5).contains(s)) {
        return Err(EvalError::ScoreOutOfRange(format!("{a} / {f} / {e}")));
    }
    Ok(RubricScores { alignment: a as u8, fidelity: f as u8, efficiency: e as u8 })
}

/// One judge call scores the script; the reference steps are shown for
/// grading only. A malformed or out-of-range reply is re-asked once.
pub fn rubric_score(
    script: &ActionScript,
    task: &str,
    reference: Option<&[ActionStep]>,
    gateway: &Gateway,
) -> Result<RubricScores, EvalError> {
    let report = validate_script(script);
    if !report.is_ok() {
        return Err(EvalError::Input(report.to_string()));
    }
    let script_text = serde_json::to_string_pretty(&script.steps).expect("steps serialize");
    let reference_text = match reference {
        Some(r) => serde_json::to_string_pretty(r).expect("steps serialize"),
        None => "(none)".to_string(),
    };
    let salient =
        [("task", task.to_string()), ("script", digest_json(&script.steps)), ("reference", digest_json(&reference))];
    let mut feedback = String::new();
    let mut last = None;
    for attempt in 1..=2 {
        let prompt = render(
            RUBRIC,
            &[("task", task), ("script", &script_text), ("reference", &reference_text), ("feedback", &feedback)],
            &salient,
        )
        .with_attempt(attempt);
        let reply = gateway.complete(&prompt, &[Tag::Synthesis])?;
        match parse_scores(&reply) {
            Ok(s) => return Ok(s),
            Err(e) => {
                log::warn!("rubric reply rejected: {e}");
                feedback = format!(
                    "\nYour previous reply was rejected ({e}). Give three integers from 1 to 5 as \"a / b / c\"."
                );
                last = Some(e);
            }
        }
    }
    Err(last.expect("loop ran"))
}
