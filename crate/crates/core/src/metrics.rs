//! Element accuracy and step accuracy over aligned gold/predicted steps.
//!
//! Predictions are aligned to gold by position; a missing prediction counts
//! as wrong. Element identity is decided by an [`ElementMatcher`]: exact key
//! equality here, DOM-resolving leniency in the std crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{Locator, LocatorChain, StepKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AnnotatedStep {
    pub gold_element: String,
    /// Where the gold element sits on the reference page, for lenient matching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_locator: Option<Locator>,
    pub gold_action: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PredictedElement {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default)]
    pub locators: LocatorChain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PredictedStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<PredictedElement>,
    pub action: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

pub trait ElementMatcher {
    fn matches(&self, predicted: &PredictedElement, gold: &AnnotatedStep) -> bool;
}

/// Strict mode: the predicted element key must equal the gold key.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeyMatcher;

impl ElementMatcher for KeyMatcher {
    fn matches(&self, predicted: &PredictedElement, gold: &AnnotatedStep) -> bool {
        predicted.key.as_deref() == Some(gold.gold_element.as_str())
    }
}

impl<F: Fn(&PredictedElement, &AnnotatedStep) -> bool> ElementMatcher for F {
    fn matches(&self, predicted: &PredictedElement, gold: &AnnotatedStep) -> bool {
        self(predicted, gold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn as_f64(self) -> f64 {
        if self.den == 0 {
            return 0.0;
        }
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("gold annotation is empty")]
    EmptyGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StepVerdict {
    pub element_ok: bool,
    pub step_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ComparisonReport {
    pub element_accuracy: f64,
    pub step_accuracy: f64,
    pub element_correct: Fraction,
    pub step_correct: Fraction,
    pub verdicts: Vec<StepVerdict>,
}

fn verdict(pred: Option<&PredictedStep>, gold: &AnnotatedStep, matcher: &impl ElementMatcher) -> StepVerdict {
    let Some(pred) = pred else {
        return StepVerdict { element_ok: false, step_ok: false };
    };
    let element_ok = pred.element.as_ref().is_some_and(|e| matcher.matches(e, gold));
    let value_ok = match &gold.gold_value {
        None => true,
        Some(v) => pred.value.as_deref().map(str::trim) == Some(v.trim()),
    };
    StepVerdict { element_ok, step_ok: element_ok && pred.action == gold.gold_action && value_ok }
}

pub fn compare(
    predicted: &[PredictedStep],
    gold: &[AnnotatedStep],
    matcher: &impl ElementMatcher,
) -> Result<ComparisonReport, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let verdicts: Vec<StepVerdict> =
        gold.iter().enumerate().map(|(i, g)| verdict(predicted.get(i), g, matcher)).collect();
    let den = gold.len() as u64;
    let element_correct = Fraction { num: verdicts.iter().filter(|v| v.element_ok).count() as u64, den };
    let step_correct = Fraction { num: verdicts.iter().filter(|v| v.step_ok).count() as u64, den };
    Ok(ComparisonReport {
        element_accuracy: element_correct.as_f64(),
        step_accuracy: step_correct.as_f64(),
        element_correct,
        step_correct,
        verdicts,
    })
}

pub fn element_accuracy(
    predicted: &[PredictedStep],
    gold: &[AnnotatedStep],
    matcher: &impl ElementMatcher,
) -> Result<f64, MetricError> {
    compare(predicted, gold, matcher).map(|r| r.element_accuracy)
}

pub fn step_accuracy(
    predicted: &[PredictedStep],
    gold: &[AnnotatedStep],
    matcher: &impl ElementMatcher,
) -> Result<f64, MetricError> {
    compare(predicted, gold, matcher).map(|r| r.step_accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn gold(key: &str, action: StepKind, value: Option<&str>) -> AnnotatedStep {
        AnnotatedStep {
            gold_element: key.into(),
            gold_locator: None,
            gold_action: action,
            gold_value: value.map(Into::into),
        }
    }

    fn pred(key: &str, action: StepKind, value: Option<&str>) -> PredictedStep {
        PredictedStep {
            element: Some(PredictedElement { key: Some(key.into()), locators: LocatorChain::default() }),
            action,
            value: value.map(Into::into),
        }
    }

    fn four_gold() -> Vec<AnnotatedStep> {
        vec![
            gold("headPrimary3", StepKind::Click, None),
            gold("confirmationNo", StepKind::Input, Some("DLTX7Y")),
            gold("firstName", StepKind::Input, Some("Sarah")),
            gold("btn-mytrip-submit", StepKind::Click, None),
        ]
    }

    fn four_pred() -> Vec<PredictedStep> {
        vec![
            pred("headPrimary3", StepKind::Click, None),
            pred("confirmationNo", StepKind::Input, Some("DLTX7Y")),
            pred("firstName", StepKind::Input, Some("Sarah")),
            pred("btn-mytrip-submit", StepKind::Click, None),
        ]
    }

    #[test]
    fn perfect() {
        let r = compare(&four_pred(), &four_gold(), &KeyMatcher).unwrap();
        assert_eq!(r.element_accuracy, 1.0);
        assert_eq!(r.step_accuracy, 1.0);
    }

    #[test]
    fn three_of_four_elements() {
        let mut p = four_pred();
        p[2] = pred("lastName", StepKind::Input, Some("Sarah"));
        assert_eq!(element_accuracy(&p, &four_gold(), &KeyMatcher), Ok(0.75));
    }

    #[test]
    fn wrong_action_kind() {
        let mut p = four_pred();
        p[3].action = StepKind::Submit;
        let r = compare(&p, &four_gold(), &KeyMatcher).unwrap();
        assert_eq!(r.element_accuracy, 1.0);
        assert_eq!(r.step_accuracy, 0.75);
    }

    #[test]
    fn wrong_element_dominates() {
        let mut p = four_pred();
        p[0] = pred("elsewhere", StepKind::Click, None);
        let r = compare(&p, &four_gold(), &KeyMatcher).unwrap();
        assert!(!r.verdicts[0].step_ok);
        assert!(r.step_accuracy <= r.element_accuracy);
    }

    #[test]
    fn wrong_value_and_missing_prediction() {
        let mut p = four_pred();
        p[1].value = Some("XXXXXX".into());
        p.truncate(3);
        let r = compare(&p, &four_gold(), &KeyMatcher).unwrap();
        assert_eq!(r.element_correct, Fraction { num: 3, den: 4 });
        assert_eq!(r.step_correct, Fraction { num: 2, den: 4 });
    }

    #[test]
    fn empty_gold() {
        assert_eq!(step_accuracy(&four_pred(), &[], &KeyMatcher), Err(MetricError::EmptyGold));
    }
}
