//! Parameter value types and slot substitution.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::dsl::{ActionApi, ActionScript, ActionStep, ValueExpr, ValueType};

/// Parameter name to literal value.
pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubstituteError {
    #[error("missing required param {0:?}")]
    MissingRequiredParam(String),
    #[error("param {name:?} expects {expected}, got {got:?}")]
    TypeMismatch { name: String, expected: ValueType, got: String },
    #[error("unknown param {0:?}")]
    UnknownParam(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{got:?} is not a valid {expected}")]
pub struct ValueTypeError {
    pub expected: ValueType,
    pub got: String,
}

/// Checks `raw` against `ty` and returns its normalized form.
///
/// Dates are normalized to `YYYY-MM-DD`; `MM/DD/YYYY` is also accepted on
/// input. Booleans are lowercased.
pub fn check_value(ty: ValueType, raw: &str) -> Result<String, ValueTypeError> {
    let err = || ValueTypeError { expected: ty, got: raw.to_string() };
    match ty {
        ValueType::String => Ok(raw.to_string()),
        ValueType::Boolean => {
            if raw.eq_ignore_ascii_case("true") {
                Ok("true".into())
            } else if raw.eq_ignore_ascii_case("false") {
                Ok("false".into())
            } else {
                Err(err())
            }
        }
        ValueType::Integer => {
            let digits = raw.strip_prefix('-').unwrap_or(raw);
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            raw.parse::<i64>().map(|n| n.to_string()).map_err(|_| err())
        }
        ValueType::Date => normalize_date(raw).ok_or_else(err),
    }
}

fn normalize_date(raw: &str) -> Option<String> {
    let (y, m, d) = if let Some((y, m, d)) = split3(raw, '-') {
        (y, m, d)
    } else {
        let (m, d, y) = split3(raw, '/')?;
        (y, m, d)
    };
    if y.len() != 4 || m.len() != 2 || d.len() != 2 {
        return None;
    }
    let (y, m, d): (u32, u32, u32) = (num(y)?, num(m)?, num(d)?);
    if !(1..=12).contains(&m) || d == 0 || d > days_in_month(y, m) {
        return None;
    }
    Some(format!("{y:04}-{m:02}-{d:02}"))
}

fn split3(s: &str, sep: char) -> Option<(&str, &str, &str)> {
    let mut it = s.split(sep);
    let parts = (it.next()?, it.next()?, it.next()?);
    it.next().is_none().then_some(parts)
}

fn num(s: &str) -> Option<u32> {
    s.bytes().all(|b| b.is_ascii_digit()).then(|| s.parse().ok())?
}

fn days_in_month(y: u32, m: u32) -> u32 {
    match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ if (y.is_multiple_of(4) && !y.is_multiple_of(100)) || y.is_multiple_of(400) => 29,
        _ => 28,
    }
}

/// Type-checks `bindings` against the api's parameters and fills defaults.
///
/// The returned map holds a normalized literal for every declared param that
/// is bound or defaulted. Optional params with neither are left out.
pub fn resolve_bindings(api: &ActionApi, bindings: &Bindings) -> Result<Bindings, SubstituteError> {
    if let Some(unknown) = bindings.keys().find(|k| api.param(k).is_none()) {
        return Err(SubstituteError::UnknownParam(unknown.clone()));
    }
    let mut resolved = Bindings::new();
    for spec in &api.params {
        let raw = match (bindings.get(&spec.name), &spec.default) {
            (Some(v), _) => v.as_str(),
            (None, _) if spec.required => return Err(SubstituteError::MissingRequiredParam(spec.name.clone())),
            (None, Some(d)) => d.as_str(),
            (None, None) => continue,
        };
        let value = check_value(spec.value_type, raw).map_err(|e| SubstituteError::TypeMismatch {
            name: spec.name.clone(),
            expected: e.expected,
            got: e.got,
        })?;
        resolved.insert(spec.name.clone(), value);
    }
    Ok(resolved)
}

/// Replaces every param-ref in `api` with its bound or default literal.
///
/// An optional param that is neither bound nor defaulted substitutes as the
/// empty string. The result declares no params.
pub fn substitute_params(api: &ActionApi, bindings: &Bindings) -> Result<ActionScript, SubstituteError> {
    let resolved = resolve_bindings(api, bindings)?;
    let steps = substitute_steps(&api.steps, &resolved);
    Ok(ActionScript {
        website: api.website.clone(),
        task_description: api.description.clone(),
        steps,
        declared_params: Vec::new(),
    })
}

pub(crate) fn substitute_steps(steps: &[ActionStep], resolved: &Bindings) -> Vec<ActionStep> {
    steps
        .iter()
        .map(|step| {
            let mut out = step.clone();
            if let Some(ValueExpr::ParamRef { param }) = &step.value {
                let lit = resolved.get(param).cloned().unwrap_or_default();
                out.value = Some(ValueExpr::Literal { literal: lit });
            }
            out
        })
        .collect()
}
