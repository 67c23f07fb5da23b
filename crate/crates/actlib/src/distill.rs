//! Task-agnostic element distillation and its verification pass.

use std::collections::{BTreeMap, BTreeSet};

use actlib_core::{LocatorChain, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::prompts::{self, Prompt};
use crate::gateway::{digest, extract_json, Gateway, GatewayError, Tag};
use crate::html::{Dom, HtmlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementRole {
    Button,
    Field,
    Link,
    Select,
    OtherInteractive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DistilledElement {
    pub element_key: String,
    pub role: ElementRole,
    pub label: String,
    pub locators: LocatorChain,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DistilledPage {
    pub page_id: String,
    pub source_url: String,
    pub elements: Vec<DistilledElement>,
    pub verified: bool,
}

/// On-disk form of a [`DistilledPage`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PageDocument {
    pub schema_version: u32,
    pub page_id: String,
    pub source_url: String,
    pub elements: Vec<DistilledElement>,
    pub verified: bool,
}

impl From<DistilledPage> for PageDocument {
    fn from(p: DistilledPage) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            page_id: p.page_id,
            source_url: p.source_url,
            elements: p.elements,
            verified: p.verified,
        }
    }
}

impl From<PageDocument> for DistilledPage {
    fn from(d: PageDocument) -> Self {
        Self { page_id: d.page_id, source_url: d.source_url, elements: d.elements, verified: d.verified }
    }
}

impl DistilledPage {
    pub fn element(&self, key: &str) -> Option<&DistilledElement> {
        self.elements.iter().find(|e| e.element_key == key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DistillWarning {
    EmptyElementList,
    /// The verification pass introduced elements the first pass missed.
    ElementsAdded {
        keys: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distillation {
    pub page: DistilledPage,
    pub warnings: Vec<DistillWarning>,
}

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("empty document")]
    EmptyHtml,
    #[error(transparent)]
    Html(#[from] HtmlError),
    #[error("page {0} is already verified")]
    AlreadyVerified(String),
    #[error("unusable LLM reply after retry: {0}")]
    LlmReplyUnparseable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementsReply {
    elements: Vec<DistilledElement>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct VerifyReply {
    #[serde(default)]
    remove: Vec<String>,
    #[serde(default)]
    relabel: BTreeMap<String, String>,
    #[serde(default)]
    add: Vec<DistilledElement>,
}

/// Checks keys are unique and every locator is well-formed and resolves on `dom`.
pub fn check_elements(dom: &Dom, elements: &[DistilledElement]) -> Result<(), String> {
    let mut keys = BTreeSet::new();
    for el in elements {
        if el.element_key.is_empty() {
            return Err("element with empty element-key".into());
        }
        if !keys.insert(el.element_key.as_str()) {
            return Err(format!("duplicate element-key {:?}", el.element_key));
        }
        if el.locators.is_empty() {
            return Err(format!("element {:?} has no locators", el.element_key));
        }
        for loc in el.locators.iter() {
            if loc.value.is_empty() {
                return Err(format!("element {:?} has an empty locator", el.element_key));
            }
            if dom.resolve(loc).is_empty() {
                return Err(format!(
                    "locator {} {:?} of element {:?} matches nothing on the page",
                    loc.strategy.as_str(),
                    loc.value,
                    el.element_key
                ));
            }
        }
    }
    Ok(())
}

fn ask<T>(
    gateway: &Gateway,
    build: impl Fn(&str) -> Prompt,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, DistillError> {
    let mut feedback = String::new();
    let mut last = String::new();
    for attempt in 1..=2 {
        let prompt = build(&feedback).with_attempt(attempt);
        let reply = gateway.complete(&prompt, &[Tag::ContainsPageHtml])?;
        match parse(&reply) {
            Ok(v) => return Ok(v),
            Err(e) => {
                log::warn!("{} reply rejected: {e}", prompt.template);
                feedback =
                    format!("\nYour previous reply was rejected: {e}. Reply again following the format exactly.");
                last = e;
            }
        }
    }
    Err(DistillError::LlmReplyUnparseable(last))
}

fn parse_json<T: for<'de> Deserialize<'de>>(reply: &str) -> Result<T, String> {
    let body = extract_json(reply).ok_or("no JSON object in reply")?;
    serde_json::from_str(body).map_err(|e| e.to_string())
}

/// Asks the LLM for the page's interactive elements.
pub fn distill_page(
    html: &str,
    page_id: &str,
    source_url: &str,
    gateway: &Gateway,
) -> Result<Distillation, DistillError> {
    if html.trim().is_empty() {
        return Err(DistillError::EmptyHtml);
    }
    let dom = Dom::parse(html)?;
    let pruned = dom.pruned();
    let doc = digest(&pruned);
    let elements = ask(
        gateway,
        |feedback| {
            prompts::render(
                prompts::DISTILL,
                &[("page_html", &pruned), ("feedback", feedback)],
                &[("page", page_id.to_string()), ("document", doc.clone())],
            )
        },
        |reply| {
            let r: ElementsReply = parse_json(reply)?;
            check_elements(&dom, &r.elements)?;
            Ok(r.elements)
        },
    )?;
    let mut warnings = Vec::new();
    if elements.is_empty() {
        log::warn!("distillation of {page_id} returned no elements");
        warnings.push(DistillWarning::EmptyElementList);
    }
    Ok(Distillation {
        page: DistilledPage { page_id: page_id.into(), source_url: source_url.into(), elements, verified: false },
        warnings,
    })
}

/// Reviews a distilled page; applies removals, relabels and additions.
pub fn verify_distillation(html: &str, page: &DistilledPage, gateway: &Gateway) -> Result<Distillation, DistillError> {
    if page.verified {
        return Err(DistillError::AlreadyVerified(page.page_id.clone()));
    }
    if html.trim().is_empty() {
        return Err(DistillError::EmptyHtml);
    }
    let dom = Dom::parse(html)?;
    let pruned = dom.pruned();
    let listing = serde_json::to_string_pretty(&page.elements).expect("elements serialize");
    let doc = digest(&format!("{pruned}\n{listing}"));
    let (elements, added) = ask(
        gateway,
        |feedback| {
            prompts::render(
                prompts::VERIFY,
                &[("page_html", &pruned), ("elements", &listing), ("feedback", feedback)],
                &[("page", page.page_id.clone()), ("document", doc.clone())],
            )
        },
        |reply| {
            let r: VerifyReply = parse_json(reply)?;
            apply_review(&dom, &page.elements, r)
        },
    )?;
    let mut warnings = Vec::new();
    if !added.is_empty() {
        log::warn!("verification of {} added {} elements", page.page_id, added.len());
        warnings.push(DistillWarning::ElementsAdded { keys: added });
    }
    if elements.is_empty() {
        warnings.push(DistillWarning::EmptyElementList);
    }
    Ok(Distillation { page: DistilledPage { elements, verified: true, ..page.clone() }, warnings })
}

fn apply_review(
    dom: &Dom,
    elements: &[DistilledElement],
    review: VerifyReply,
) -> Result<(Vec<DistilledElement>, Vec<String>), String> {
    let known: BTreeSet<&str> = elements.iter().map(|e| e.element_key.as_str()).collect();
    for key in review.remove.iter().chain(review.relabel.keys()) {
        if !known.contains(key.as_str()) {
            return Err(format!("review names unknown element-key {key:?}"));
        }
    }
    let mut out: Vec<DistilledElement> =
        elements.iter().filter(|e| !review.remove.contains(&e.element_key)).cloned().collect();
    for el in &mut out {
        if let Some(label) = review.relabel.get(&el.element_key) {
            el.label = label.clone();
        }
    }
    let added: Vec<String> = review.add.iter().map(|e| e.element_key.clone()).collect();
    out.extend(review.add);
    check_elements(dom, &out)?;
    Ok((out, added))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Fixture, ReplayProvider};
    use crate::html::scan_interactive_elements;
    use serde_json::json;

    const PAGE: &str = r#"<html><body><a id="mytrips" href="/trips">My Trips</a>
<input id="confirmationNo" placeholder="Confirmation"><button id="go">Find</button>
<script>var x = "{{page_html}}";</script></body></html>"#;

    fn distill_fixture(reply: serde_json::Value, attempt: Option<u32>) -> Fixture {
        let pruned = Dom::parse(PAGE).unwrap().pruned();
        let mut slots: BTreeMap<String, String> =
            [("page".into(), "home".into()), ("document".into(), digest(&pruned))].into();
        if let Some(a) = attempt {
            slots.insert("attempt".into(), a.to_string());
        }
        Fixture::json(prompts::DISTILL, slots, reply)
    }

    fn honest_reply() -> serde_json::Value {
        json!({"elements": scan_interactive_elements(PAGE).unwrap()})
    }

    fn gateway(fixtures: Vec<Fixture>) -> Gateway {
        let mut r = ReplayProvider::default();
        for f in fixtures {
            r.insert(f);
        }
        Gateway::new(r)
    }

    #[test]
    fn distills_scan_oracle_reply() {
        let g = gateway(vec![distill_fixture(honest_reply(), None)]);
        let d = distill_page(PAGE, "home", "https://x/", &g).unwrap();
        assert_eq!(d.page.elements.len(), 3);
        assert!(!d.page.verified);
        assert!(d.warnings.is_empty());
        assert_eq!(g.ledger().count_tagged(Tag::ContainsPageHtml), 1);
        assert!(!g.ledger().exchanges[0].user_text.contains("var x"));
    }

    #[test]
    fn empty_list_warns() {
        let g = gateway(vec![distill_fixture(json!({"elements": []}), None)]);
        let d = distill_page(PAGE, "home", "", &g).unwrap();
        assert!(d.page.elements.is_empty());
        assert_eq!(d.warnings, [DistillWarning::EmptyElementList]);
    }

    #[test]
    fn malformed_twice_fails_and_once_recovers() {
        let bad = json!({"items": 3});
        let g = gateway(vec![distill_fixture(bad.clone(), None), distill_fixture(bad.clone(), Some(2))]);
        assert!(matches!(distill_page(PAGE, "home", "", &g), Err(DistillError::LlmReplyUnparseable(_))));
        assert_eq!(g.ledger().calls(), 2);

        let g = gateway(vec![distill_fixture(bad, None), distill_fixture(honest_reply(), Some(2))]);
        assert_eq!(distill_page(PAGE, "home", "", &g).unwrap().page.elements.len(), 3);
    }

    #[test]
    fn unresolvable_locator_is_rejected() {
        let reply = json!({"elements": [{"element-key": "x", "role": "button", "label": "X",
            "locators": [{"strategy": "by-id", "value": "nope"}]}]});
        let g = gateway(vec![distill_fixture(reply.clone(), None), distill_fixture(reply, Some(2))]);
        let err = distill_page(PAGE, "home", "", &g).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    fn verify_fixture(page: &DistilledPage, reply: serde_json::Value) -> Fixture {
        let pruned = Dom::parse(PAGE).unwrap().pruned();
        let listing = serde_json::to_string_pretty(&page.elements).unwrap();
        let slots = [
            ("page".to_string(), page.page_id.clone()),
            ("document".to_string(), digest(&format!("{pruned}\n{listing}"))),
        ]
        .into();
        Fixture::json(prompts::VERIFY, slots, reply)
    }

    fn unverified() -> DistilledPage {
        let mut elements = scan_interactive_elements(PAGE).unwrap();
        elements[2].label = "Newsletter".into();
        DistilledPage { page_id: "home".into(), source_url: "".into(), elements, verified: false }
    }

    #[test]
    fn verification_relabels_and_approves() {
        let page = unverified();
        let g = gateway(vec![verify_fixture(&page, json!({"relabel": {"go": "Find trip"}}))]);
        let v = verify_distillation(PAGE, &page, &g).unwrap();
        assert!(v.page.verified);
        assert_eq!(v.page.element("go").unwrap().label, "Find trip");

        let g = gateway(vec![verify_fixture(&page, json!({}))]);
        let v = verify_distillation(PAGE, &page, &g).unwrap();
        assert_eq!(v.page.elements, page.elements);
        assert!(v.page.verified);
    }

    #[test]
    fn verification_flags_additions_and_removals() {
        let mut page = unverified();
        let dropped = page.elements.remove(0);
        let g = gateway(vec![verify_fixture(&page, json!({"remove": ["go"], "add": [dropped]}))]);
        let v = verify_distillation(PAGE, &page, &g).unwrap();
        assert_eq!(v.page.elements.len(), 2);
        assert!(v.page.element("go").is_none());
        assert_eq!(v.warnings, [DistillWarning::ElementsAdded { keys: vec!["mytrips".into()] }]);
    }

    #[test]
    fn already_verified_is_guarded() {
        let mut page = unverified();
        page.verified = true;
        let g = gateway(vec![]);
        assert!(matches!(verify_distillation(PAGE, &page, &g), Err(DistillError::AlreadyVerified(_))));
    }
}
