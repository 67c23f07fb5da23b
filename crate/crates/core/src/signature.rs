//! Literal-independent structural key of a script.

use alloc::string::String;
use core::fmt::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::ActionScript;
use crate::validate::{validate_script, ValidationReport};

/// `website|kind[strategy,...];kind[...];...`
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(pub String);

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid script: {0}")]
pub struct InvalidScript(pub ValidationReport);

pub fn script_signature(script: &ActionScript) -> Result<Signature, InvalidScript> {
    let report = validate_script(script);
    if !report.is_ok() {
        return Err(InvalidScript(report));
    }
    let mut out = String::new();
    out.push_str(&script.website);
    out.push('|');
    for (i, step) in script.steps.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        out.push_str(step.kind.as_str());
        out.push('[');
        for (j, loc) in step.locators().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", loc.strategy);
        }
        out.push(']');
    }
    Ok(Signature(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{ActionStep, Locator, ValueExpr};
    use alloc::vec;

    fn cic(city: &str) -> ActionScript {
        ActionScript::new(
            "delta.com",
            "t",
            vec![
                ActionStep::click(Locator::by_id("a")),
                ActionStep::input(Locator::by_id("b"), ValueExpr::literal(city)),
                ActionStep::click(vec![Locator::by_id("c"), Locator::by_css(".c")]),
            ],
        )
    }

    #[test]
    fn deterministic_and_literal_free() {
        assert_eq!(script_signature(&cic("Seattle")), script_signature(&cic("Seattle")));
        assert_eq!(script_signature(&cic("Seattle")), script_signature(&cic("Boston")));
        assert_eq!(script_signature(&cic("x")).unwrap().0, "delta.com|click[by-id];input[by-id];click[by-id,by-css]");
    }

    #[test]
    fn order_matters() {
        let mut other = cic("Seattle");
        other.steps.swap(1, 2);
        assert_ne!(script_signature(&cic("Seattle")), script_signature(&other));
    }

    #[test]
    fn invalid_script_rejected() {
        let s = ActionScript::new("w", "t", vec![]);
        assert!(script_signature(&s).is_err());
    }
}
