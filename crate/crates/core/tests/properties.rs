use std::collections::BTreeMap;

use actlib_core::dsl::ScriptDocument;
use actlib_core::metrics::{compare, AnnotatedStep, KeyMatcher, PredictedElement, PredictedStep};
use actlib_core::params::check_value;
use actlib_core::staleness::{ExecutionStats, Outcome};
use actlib_core::synth::{check_completeness, find_binding};
use actlib_core::tokens::{compare_costs, Baseline};
use actlib_core::{
    script_signature, substitute_params, validate_api, validate_script, ActionApi, ActionScript, ActionStep, Bindings,
    Locator, LocatorChain, ParamSpec, StepKind, ValueExpr, ValueType,
};
use proptest::prelude::*;

fn locator() -> impl Strategy<Value = Locator> {
    prop_oneof![
        "[a-z][a-zA-Z0-9_-]{0,8}".prop_map(Locator::by_id),
        "[a-z]{1,6}".prop_map(Locator::by_name),
        "[a-z]{1,4}\\.[a-z]{1,5}".prop_map(Locator::by_css),
        "[A-Z][a-z ]{0,10}".prop_map(|t| Locator::by_text(t.trim_end().to_string())),
    ]
}

fn chain() -> impl Strategy<Value = LocatorChain> {
    prop::collection::vec(locator(), 1..3).prop_map(LocatorChain)
}

fn literal() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ]{1,12}"
}

/// A concrete, valid step.
fn step() -> impl Strategy<Value = ActionStep> {
    prop_oneof![
        "https://[a-z]{3,8}\\.com/[a-z]{0,6}".prop_map(|u| ActionStep::navigate(ValueExpr::literal(u))),
        chain().prop_map(ActionStep::click),
        chain().prop_map(ActionStep::submit),
        (chain(), literal()).prop_map(|(c, v)| ActionStep::input(c, ValueExpr::literal(v))),
        (chain(), literal()).prop_map(|(c, v)| ActionStep::select_option(c, ValueExpr::literal(v))),
        (0u32..20).prop_map(|n| ActionStep::wait(f64::from(n) / 4.0)),
    ]
}

fn script() -> impl Strategy<Value = ActionScript> {
    ("[a-z]{3,8}\\.com", "[A-Za-z ]{0,30}", prop::collection::vec(step(), 1..8))
        .prop_map(|(w, t, steps)| ActionScript::new(w, t, steps))
}

/// An api that lifts a random subset of the script's input values into
/// string params, with the binding that reproduces the script.
fn lifted(script: &ActionScript, mask: &[bool]) -> (ActionApi, Bindings) {
    let mut params = Vec::new();
    let mut bindings = Bindings::new();
    let steps = script
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut s = s.clone();
            if s.kind == StepKind::Input && mask.get(i).copied().unwrap_or(false) {
                let name = format!("p{i}");
                bindings.insert(name.clone(), s.literal().unwrap().to_string());
                params.push(ParamSpec::required(name.clone(), ValueType::String));
                s.value = Some(ValueExpr::param(name));
            }
            s
        })
        .collect();
    let api = ActionApi {
        api_id: format!("{}/lifted", script.website),
        name: "lifted".into(),
        description: "lifted".into(),
        params,
        steps,
        website: script.website.clone(),
    };
    (api, bindings)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generated_scripts_are_valid(s in script()) {
        prop_assert!(validate_script(&s).is_ok());
    }

    #[test]
    fn script_documents_round_trip(s in script()) {
        let doc = ScriptDocument::from(s.clone());
        let text = serde_json::to_string(&doc).unwrap();
        let back: ScriptDocument = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(ActionScript::from(back), s);
    }

    #[test]
    fn substitution_reproduces_the_source(s in script(), mask in prop::collection::vec(any::<bool>(), 8)) {
        let (api, bindings) = lifted(&s, &mask);
        prop_assert!(validate_api(&api).is_ok());
        let out = substitute_params(&api, &bindings).unwrap();
        prop_assert_eq!(&out.steps, &s.steps);
        prop_assert!(!out.has_param_refs());
        prop_assert_eq!(find_binding(&api, &s.steps).unwrap(), bindings);
    }

    #[test]
    fn completeness_holds_for_every_rebinding(
        s in script(),
        mask in prop::collection::vec(any::<bool>(), 8),
        values in prop::collection::vec(literal(), 8),
    ) {
        let (api, _) = lifted(&s, &mask);
        let rebound: Bindings = api.params.iter().zip(&values).map(|(p, v)| (p.name.clone(), v.clone())).collect();
        let other = substitute_params(&api, &rebound).unwrap();
        let found = check_completeness(&api, [s.steps.as_slice(), other.steps.as_slice()]).unwrap();
        prop_assert_eq!(&found[1], &rebound);
    }

    #[test]
    fn missing_required_binding_is_refused(s in script(), mask in prop::collection::vec(any::<bool>(), 8)) {
        let (api, mut bindings) = lifted(&s, &mask);
        if let Some(first) = bindings.keys().next().cloned() {
            bindings.remove(&first);
            prop_assert!(substitute_params(&api, &bindings).is_err());
        }
    }

    #[test]
    fn signature_ignores_literals(s in script(), values in prop::collection::vec(literal(), 8)) {
        let mut t = s.clone();
        for (step, v) in t.steps.iter_mut().zip(&values) {
            if matches!(step.kind, StepKind::Input | StepKind::SelectOption) {
                step.value = Some(ValueExpr::literal(v.clone()));
            }
        }
        t.task_description.push_str(" again");
        prop_assert_eq!(script_signature(&s).unwrap(), script_signature(&t).unwrap());
    }

    #[test]
    fn signature_sees_structure(s in script()) {
        let mut t = s.clone();
        t.steps.push(ActionStep::wait(1.0));
        prop_assert_ne!(script_signature(&s).unwrap(), script_signature(&t).unwrap());
    }

    #[test]
    fn staleness_tracks_the_trailing_failure_run(
        outcomes in prop::collection::vec(any::<bool>(), 0..30),
        threshold in 1u32..5,
    ) {
        let mut stats = ExecutionStats::default();
        for ok in &outcomes {
            stats.record(if *ok { Outcome::Success } else { Outcome::Failure }, threshold);
            prop_assert!(stats.is_consistent(threshold));
        }
        let trailing = outcomes.iter().rev().take_while(|ok| !**ok).count() as u32;
        prop_assert_eq!(stats.failure_streak, trailing);
        prop_assert_eq!(stats.success_count, outcomes.iter().filter(|ok| **ok).count() as u64);
        prop_assert_eq!(stats.stale, trailing >= threshold);
    }

    #[test]
    fn us_and_iso_dates_agree(y in 1900u32..2100, m in 1u32..=12, d in 1u32..=28) {
        let iso = check_value(ValueType::Date, &format!("{y:04}-{m:02}-{d:02}")).unwrap();
        let us = check_value(ValueType::Date, &format!("{m:02}/{d:02}/{y:04}")).unwrap();
        prop_assert_eq!(iso, us);
    }

    #[test]
    fn scaled_percent_matches_float_rounding(total in 0u64..400_000, per_call in 1u64..5_000, calls in 1u64..300) {
        let c = compare_costs(total, 1, Baseline { tokens_per_call: per_call, calls }, false).unwrap();
        let exact = (per_call * calls) as f64;
        let pct = (exact - total as f64) / exact * 100.0;
        let scaled = c.reduction_percent_scaled(0) as f64;
        prop_assert!((scaled - pct).abs() <= 0.5 + 1e-9, "{scaled} vs {pct}");
    }
}

const KINDS: [StepKind; 4] = [StepKind::Click, StepKind::Input, StepKind::SelectOption, StepKind::Submit];

fn gold_step() -> impl Strategy<Value = AnnotatedStep> {
    (0usize..4, 0usize..4, prop::option::of(0usize..3)).prop_map(|(e, k, v)| AnnotatedStep {
        gold_element: format!("e{e}"),
        gold_locator: None,
        gold_action: KINDS[k],
        gold_value: v.map(|v| format!("v{v}")),
    })
}

fn pred_step() -> impl Strategy<Value = PredictedStep> {
    (prop::option::of(0usize..4), 0usize..4, prop::option::of(0usize..3)).prop_map(|(e, k, v)| PredictedStep {
        element: e.map(|e| PredictedElement { key: Some(format!("e{e}")), locators: LocatorChain::default() }),
        action: KINDS[k],
        value: v.map(|v| format!("v{v}")),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn metrics_equal_brute_force_counts(
        gold in prop::collection::vec(gold_step(), 1..7),
        pred in prop::collection::vec(pred_step(), 0..9),
    ) {
        let mut elem = 0u64;
        let mut full = 0u64;
        for (i, g) in gold.iter().enumerate() {
            let Some(p) = pred.get(i) else { continue };
            let key_ok = p.element.as_ref().and_then(|e| e.key.clone()) == Some(g.gold_element.clone());
            let value_ok = g.gold_value.is_none() || p.value == g.gold_value;
            elem += u64::from(key_ok);
            full += u64::from(key_ok && p.action == g.gold_action && value_ok);
        }
        let r = compare(&pred, &gold, &KeyMatcher).unwrap();
        prop_assert_eq!(r.element_correct.num, elem);
        prop_assert_eq!(r.step_correct.num, full);
        prop_assert_eq!(r.element_correct.den, gold.len() as u64);
        prop_assert_eq!(r.element_accuracy, elem as f64 / gold.len() as f64);
        prop_assert_eq!(r.step_accuracy, full as f64 / gold.len() as f64);
        prop_assert!(r.step_accuracy <= r.element_accuracy);
    }
}

#[test]
fn cost_arithmetic_on_the_reference_numbers() {
    let c = compare_costs(25_000, 1, Baseline::default(), false).unwrap();
    assert_eq!(c.baseline_total, 197_190);
    assert_eq!((c.reduction_num, c.reduction_den), (172_190, 197_190));
    assert!((c.reduction() - 0.8732).abs() < 1e-3);
    assert_eq!(c.reduction_percent_scaled(0), 87);
    assert_eq!(c.reduction_percent_scaled(1), 873);
}

#[test]
fn optional_params_fall_back_to_defaults() {
    let api = ActionApi {
        api_id: "x.com/f".into(),
        name: "f".into(),
        description: "f".into(),
        params: vec![ParamSpec::optional("flag", ValueType::Boolean, Some("false"))],
        steps: vec![ActionStep::input(LocatorChain::single(Locator::by_id("c")), ValueExpr::param("flag"))],
        website: "x.com".into(),
    };
    let out = substitute_params(&api, &BTreeMap::new()).unwrap();
    assert_eq!(out.steps[0].literal(), Some("false"));
    let bad: Bindings = [("flag".to_string(), "maybe".to_string())].into();
    assert!(substitute_params(&api, &bad).is_err());
}
