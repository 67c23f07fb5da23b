//! Parameterization completeness: an API is accepted for a cluster only if
//! every member script is reproduced, step for step, by some binding.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::dsl::{ActionApi, ActionStep, ValueExpr};
use crate::params::{resolve_bindings, substitute_steps, Bindings, SubstituteError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Mismatch {
    #[error("api has {api} steps, member has {member}")]
    LengthDiffers { api: usize, member: usize },
    #[error("step {index}: {what} differs")]
    StepDiffers { index: usize, what: &'static str },
    #[error("param {param:?} would need both {first:?} and {second:?}")]
    ConflictingBinding { param: String, first: String, second: String },
    #[error("member step {0} is not concrete")]
    MemberNotConcrete(usize),
    #[error("derived binding rejected: {0}")]
    Binding(SubstituteError),
    #[error("substitution does not reproduce step {0}")]
    NotReproduced(usize),
}

/// Infers the binding under which `api` reproduces `member`.
pub fn find_binding(api: &ActionApi, member: &[ActionStep]) -> Result<Bindings, Mismatch> {
    if api.steps.len() != member.len() {
        return Err(Mismatch::LengthDiffers { api: api.steps.len(), member: member.len() });
    }
    let mut bindings = Bindings::new();
    for (index, (a, m)) in api.steps.iter().zip(member).enumerate() {
        if a.kind != m.kind {
            return Err(Mismatch::StepDiffers { index, what: "kind" });
        }
        if a.target != m.target {
            return Err(Mismatch::StepDiffers { index, what: "target" });
        }
        if a.wait_seconds != m.wait_seconds {
            return Err(Mismatch::StepDiffers { index, what: "wait-seconds" });
        }
        match (&a.value, &m.value) {
            (None, None) => {}
            (_, Some(ValueExpr::ParamRef { .. })) => return Err(Mismatch::MemberNotConcrete(index)),
            (Some(ValueExpr::Literal { literal: x }), Some(ValueExpr::Literal { literal: y })) if x == y => {}
            (Some(ValueExpr::ParamRef { param }), Some(ValueExpr::Literal { literal })) => match bindings.get(param) {
                Some(prev) if prev != literal => {
                    return Err(Mismatch::ConflictingBinding {
                        param: param.clone(),
                        first: prev.clone(),
                        second: literal.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    bindings.insert(param.clone(), literal.clone());
                }
            },
            _ => return Err(Mismatch::StepDiffers { index, what: "value" }),
        }
    }
    let resolved = resolve_bindings(api, &bindings).map_err(Mismatch::Binding)?;
    let produced = substitute_steps(&api.steps, &resolved);
    if let Some(i) = produced.iter().zip(member).position(|(p, m)| p != m) {
        return Err(Mismatch::NotReproduced(i));
    }
    Ok(bindings)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("member {member} not reproducible: {reason}")]
pub struct Incomplete {
    pub member: usize,
    pub reason: Mismatch,
}

/// Returns one reproducing binding per member, or the first member that has none.
pub fn check_completeness<'a, I>(api: &ActionApi, members: I) -> Result<Vec<Bindings>, Incomplete>
where
    I: IntoIterator<Item = &'a [ActionStep]>,
{
    members
        .into_iter()
        .enumerate()
        .map(|(member, steps)| find_binding(api, steps).map_err(|reason| Incomplete { member, reason }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{Locator, ParamSpec, ValueType};
    use alloc::vec;

    fn api() -> ActionApi {
        ActionApi {
            api_id: "x".into(),
            name: "search".into(),
            description: "d".into(),
            params: vec![
                ParamSpec::required("city", ValueType::String),
                ParamSpec::optional("miles", ValueType::Boolean, Some("false")),
            ],
            steps: vec![
                ActionStep::input(Locator::by_id("from"), ValueExpr::param("city")),
                ActionStep::input(Locator::by_id("miles"), ValueExpr::param("miles")),
                ActionStep::click(Locator::by_id("go")),
            ],
            website: "w".into(),
        }
    }

    fn member(city: &str, miles: &str) -> Vec<ActionStep> {
        vec![
            ActionStep::input(Locator::by_id("from"), ValueExpr::literal(city)),
            ActionStep::input(Locator::by_id("miles"), ValueExpr::literal(miles)),
            ActionStep::click(Locator::by_id("go")),
        ]
    }

    #[test]
    fn reproduces_members() {
        let a = member("Seattle", "true");
        let b = member("Boston", "false");
        let bs = check_completeness(&api(), [a.as_slice(), b.as_slice()]).unwrap();
        assert_eq!(bs[0]["city"], "Seattle");
        assert_eq!(bs[1]["miles"], "false");
    }

    #[test]
    fn locator_change_is_not_parameterizable() {
        let mut m = member("Seattle", "true");
        m[2] = ActionStep::click(Locator::by_id("go2"));
        let err = check_completeness(&api(), [m.as_slice()]).unwrap_err();
        assert_eq!(err.reason, Mismatch::StepDiffers { index: 2, what: "target" });
    }

    #[test]
    fn conflicting_use_of_one_param() {
        let mut a = api();
        a.steps[1].value = Some(ValueExpr::param("city"));
        let m = member("Seattle", "Boston");
        assert!(matches!(find_binding(&a, &m), Err(Mismatch::ConflictingBinding { .. })));
    }

    #[test]
    fn non_normal_literal_not_reproduced() {
        let m = member("Seattle", "TRUE");
        assert_eq!(find_binding(&api(), &m), Err(Mismatch::NotReproduced(1)));
    }

    #[test]
    fn length_mismatch() {
        let m = member("a", "true");
        assert!(matches!(find_binding(&api(), &m[..2]), Err(Mismatch::LengthDiffers { api: 3, member: 2 })));
    }
}
