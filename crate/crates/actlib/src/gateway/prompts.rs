//! Prompt templates, stored as text assets under `prompts/` and keyed by phase name.
//!
//! Each asset has a `[system]` section and a `[user]` section. `{{name}}`
//! placeholders are filled in a single pass; substituted values are never
//! rescanned, so page HTML containing braces is safe.

use std::collections::BTreeMap;

use super::prompt_key;

pub const DISTILL: &str = "distill";
pub const VERIFY: &str = "verify";
pub const DISTMAP_GENERATE: &str = "distmap-generate";
pub const UNRAVEL_STEP: &str = "unravel-step";
pub const CLUSTER: &str = "cluster";
pub const SYNTHESIZE_DRAFT: &str = "synthesize-draft";
pub const SYNTHESIZE_REFINE: &str = "synthesize-refine";
pub const RETRIEVE: &str = "retrieve";
pub const RUBRIC: &str = "rubric";

const ASSETS: &[(&str, &str)] = &[
    (DISTILL, include_str!("../../prompts/distill.txt")),
    (VERIFY, include_str!("../../prompts/verify.txt")),
    (DISTMAP_GENERATE, include_str!("../../prompts/distmap-generate.txt")),
    (UNRAVEL_STEP, include_str!("../../prompts/unravel-step.txt")),
    (CLUSTER, include_str!("../../prompts/cluster.txt")),
    (SYNTHESIZE_DRAFT, include_str!("../../prompts/synthesize-draft.txt")),
    (SYNTHESIZE_REFINE, include_str!("../../prompts/synthesize-refine.txt")),
    (RETRIEVE, include_str!("../../prompts/retrieve.txt")),
    (RUBRIC, include_str!("../../prompts/rubric.txt")),
];

/// A rendered prompt plus the salient slot values that key it for replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub template: String,
    pub slots: BTreeMap<String, String>,
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn raw(
        template: impl Into<String>,
        slots: BTreeMap<String, String>,
        system: impl Into<String>,
        user: impl Into<String>,
    ) -> Self {
        Self { template: template.into(), slots, system: system.into(), user: user.into() }
    }

    pub fn key(&self) -> String {
        prompt_key(&self.template, &self.slots)
    }

    /// Marks a re-prompt so replay fixtures can script a different answer.
    pub fn with_attempt(mut self, attempt: u32) -> Self {
        if attempt > 1 {
            self.slots.insert("attempt".into(), attempt.to_string());
        }
        self
    }
}

/// Builds a prompt from a named asset.
///
/// `vars` fill the template text; `salient` are the slot values that
/// identify the call for replay (usually a subset of, or digests of, `vars`).
pub fn render(template: &str, vars: &[(&str, &str)], salient: &[(&str, String)]) -> Prompt {
    let asset = ASSETS
        .iter()
        .find(|(n, _)| *n == template)
        .map(|(_, a)| *a)
        .unwrap_or_else(|| panic!("no prompt asset named {template}"));
    let (system, user) = split_sections(asset);
    Prompt {
        template: template.to_string(),
        slots: salient.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        system: fill(system, vars),
        user: fill(user, vars),
    }
}

fn split_sections(asset: &str) -> (&str, &str) {
    let body = asset.trim_start().strip_prefix("[system]").unwrap_or(asset);
    match body.split_once("\n[user]\n") {
        Some((s, u)) => (s.trim(), u.trim()),
        None => ("", body.trim()),
    }
}

fn fill(text: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let name = after[..close].trim();
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        log::warn!("prompt placeholder {name:?} has no value");
                        out.push_str(&rest[open..open + 2 + close + 2]);
                    }
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_asset_has_both_sections() {
        for (name, asset) in ASSETS {
            let (s, u) = split_sections(asset);
            assert!(!s.is_empty(), "{name} system");
            assert!(!u.is_empty(), "{name} user");
        }
    }

    #[test]
    fn fill_is_single_pass() {
        let out = fill("a {{x}} b {{y}}", &[("x", "{{y}}"), ("y", "Y")]);
        assert_eq!(out, "a {{y}} b Y");
        assert_eq!(fill("{{missing}} {{", &[]), "{{missing}} {{");
    }

    #[test]
    fn salient_slots_key_the_prompt() {
        let a = render(RETRIEVE, &[("request", "r"), ("catalog", "c1")], &[("request", "r".into())]);
        let b = render(RETRIEVE, &[("request", "r"), ("catalog", "c2")], &[("request", "r".into())]);
        assert_ne!(a.user, b.user);
        assert_eq!(a.key(), b.key());
        assert_ne!(a.key(), a.clone().with_attempt(2).key());
        assert_eq!(a.key(), a.clone().with_attempt(1).key());
    }
}
