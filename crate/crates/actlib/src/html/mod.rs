//! HTML parsing, locator resolution, pruning and the deterministic
//! interactive-element scan.

mod dom;
pub mod xpath;

use std::collections::{BTreeMap, BTreeSet};

use actlib_core::{Locator, LocatorChain};
use scraper::ElementRef;
use thiserror::Error;

pub use dom::{text_xpath, AttrOverrides, Dom};

use crate::distill::{DistilledElement, ElementRole};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HtmlError {
    #[error("unparseable document: {0}")]
    Unparseable(String),
}

const INTERACTIVE_ROLES: &[&str] = &[
    "button",
    "link",
    "checkbox",
    "radio",
    "textbox",
    "searchbox",
    "combobox",
    "listbox",
    "menuitem",
    "option",
    "switch",
    "tab",
    "slider",
    "spinbutton",
];

/// Every interactive element of `html` with machine labels and locators.
///
/// Anchors, buttons, inputs (other than `type=hidden`), selects, textareas
/// and nodes carrying an interactive ARIA role each yield one element. The
/// primary locator is by-id when an id exists, else by-name, else the CSS
/// path; the CSS path is appended as a fallback.
pub fn scan_interactive_elements(html: &str) -> Result<Vec<DistilledElement>, HtmlError> {
    let dom = Dom::parse(html)?;
    Ok(scan_dom(&dom))
}

pub fn scan_dom(dom: &Dom) -> Vec<DistilledElement> {
    let labels_for: BTreeMap<String, String> = dom
        .elements()
        .filter(|e| e.value().name() == "label")
        .filter_map(|e| Some((e.value().attr("for")?.to_string(), dom.text_of(e.id()))))
        .collect();

    let mut keys = BTreeSet::new();
    let mut out = Vec::new();
    for (n, el) in dom.elements().filter(|e| is_interactive(e)).enumerate() {
        let v = el.value();
        let role = role_of(&el);
        let css = dom.css_path(el.id());
        let primary = if let Some(id) = v.attr("id").filter(|s| !s.is_empty()) {
            Locator::by_id(id)
        } else if let Some(name) = v.attr("name").filter(|s| !s.is_empty()) {
            Locator::by_name(name)
        } else {
            Locator::by_css(css.clone())
        };
        let mut chain = vec![primary];
        let fallback = Locator::by_css(css);
        if !chain.contains(&fallback) {
            chain.push(fallback);
        }

        let base = v
            .attr("id")
            .or(v.attr("name"))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| format!("{}-{}", v.name(), n));
        let mut key = base.clone();
        let mut k = 2;
        while !keys.insert(key.clone()) {
            key = format!("{base}-{k}");
            k += 1;
        }

        let text = dom.text_of(el.id());
        let label = [
            v.attr("aria-label").map(str::to_string),
            v.attr("id").and_then(|id| labels_for.get(id).cloned()),
            v.attr("placeholder").map(str::to_string),
            (!text.is_empty()).then_some(text),
            v.attr("value").map(str::to_string),
            v.attr("title").map(str::to_string),
            v.attr("name").map(str::to_string),
            v.attr("id").map(str::to_string),
        ]
        .into_iter()
        .flatten()
        .find(|s| !s.trim().is_empty())
        .unwrap_or_else(|| v.name().to_string());

        out.push(DistilledElement {
            element_key: key,
            role,
            label,
            locators: LocatorChain(chain),
            attributes: v.attrs().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        });
    }
    out
}

fn is_interactive(el: &ElementRef<'_>) -> bool {
    let v = el.value();
    match v.name() {
        "a" | "button" | "select" | "textarea" => true,
        "input" => !v.attr("type").is_some_and(|t| t.eq_ignore_ascii_case("hidden")),
        _ => v.attr("role").is_some_and(|r| INTERACTIVE_ROLES.contains(&r.trim().to_ascii_lowercase().as_str())),
    }
}

fn role_of(el: &ElementRef<'_>) -> ElementRole {
    let v = el.value();
    if let Some(role) = v.attr("role").map(|r| r.trim().to_ascii_lowercase()) {
        match role.as_str() {
            "button" | "menuitem" | "tab" | "switch" => return ElementRole::Button,
            "link" => return ElementRole::Link,
            "textbox" | "searchbox" | "combobox" | "spinbutton" | "slider" => return ElementRole::Field,
            "listbox" => return ElementRole::Select,
            "checkbox" | "radio" | "option" => return ElementRole::OtherInteractive,
            _ => {}
        }
    }
    match v.name() {
        "a" => ElementRole::Link,
        "button" => ElementRole::Button,
        "select" => ElementRole::Select,
        "textarea" => ElementRole::Field,
        "input" => match v.attr("type").map(str::to_ascii_lowercase).as_deref() {
            Some("submit" | "button" | "reset" | "image") => ElementRole::Button,
            Some("checkbox" | "radio") => ElementRole::OtherInteractive,
            _ => ElementRole::Field,
        },
        _ => ElementRole::OtherInteractive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"<html><body>
<button id="go">Go</button><button class="alt">Alt</button>
<input type="text" id="confirmationNo"><input type="hidden" name="csrf" value="x">
<a href="/help">Help</a>
<div>not interactive</div>
<script>document.write("<button>fake</button>")</script>
</body></html>"#;

    #[test]
    fn counts_match_tag_oracle() {
        let els = scan_interactive_elements(FIXTURE).unwrap();
        // oracle: 2 buttons + 1 visible input + 1 anchor
        assert_eq!(els.len(), 4);
        let roles: Vec<_> = els.iter().map(|e| e.role).collect();
        assert_eq!(roles, [ElementRole::Button, ElementRole::Button, ElementRole::Field, ElementRole::Link]);
    }

    #[test]
    fn confirmation_field_by_id() {
        let els = scan_interactive_elements(FIXTURE).unwrap();
        let conf = els.iter().find(|e| e.element_key == "confirmationNo").unwrap();
        assert_eq!(conf.role, ElementRole::Field);
        assert_eq!(conf.locators.first(), Some(&Locator::by_id("confirmationNo")));
    }

    #[test]
    fn empty_body_scans_empty() {
        assert!(scan_interactive_elements("<html><body></body></html>").unwrap().is_empty());
    }

    #[test]
    fn every_locator_resolves_to_its_element() {
        let dom = Dom::parse(FIXTURE).unwrap();
        for el in scan_dom(&dom) {
            let targets: BTreeSet<_> = el.locators.iter().map(|l| dom.resolve_first(l).expect("resolves")).collect();
            assert_eq!(targets.len(), 1, "{el:?}");
        }
    }

    #[test]
    fn aria_roles_and_name_preference() {
        let html =
            r#"<div role="button" aria-label="Close">x</div><input name="q" placeholder="Search"><input name="q">"#;
        let els = scan_interactive_elements(html).unwrap();
        assert_eq!(els[0].role, ElementRole::Button);
        assert_eq!(els[0].label, "Close");
        assert!(els[0].locators.first().unwrap().strategy == actlib_core::Strategy::ByCss);
        assert_eq!(els[1].locators.first(), Some(&Locator::by_name("q")));
        assert_eq!(els[1].label, "Search");
        assert_eq!(els[2].element_key, "q-2");
    }

    #[test]
    fn binary_input_fails() {
        assert!(matches!(scan_interactive_elements("\u{89}PNG\r\n\u{1a}\n\u{0}\u{0}"), Err(HtmlError::Unparseable(_))));
    }
}
