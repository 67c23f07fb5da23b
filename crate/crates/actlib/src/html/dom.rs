use std::collections::BTreeMap;

use actlib_core::{Locator, Strategy};
use ego_tree::{NodeId, NodeRef};
use scraper::{ElementRef, Html, Node, Selector};

use super::xpath;
use super::HtmlError;

const VOID_ELEMENTS: &[&str] =
    &["area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track", "wbr"];
const RAW_TEXT_ELEMENTS: &[&str] = &["script", "style", "xmp", "iframe", "noembed", "noframes", "noscript"];
const PRUNED_ELEMENTS: &[&str] = &["script", "style"];

/// Attribute overrides applied at serialization time: `None` removes the attribute.
pub type AttrOverrides = BTreeMap<NodeId, BTreeMap<String, Option<String>>>;

/// A leniently parsed HTML document with locator resolution.
pub struct Dom {
    html: Html,
}

impl std::fmt::Debug for Dom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dom").finish_non_exhaustive()
    }
}

impl Dom {
    /// Parses with html5ever's error recovery. Only text that is clearly not
    /// markup (NUL or other C0 control bytes) is rejected.
    pub fn parse(text: &str) -> Result<Self, HtmlError> {
        if let Some(c) = text.chars().find(|c| c.is_control() && !matches!(c, '\t' | '\n' | '\r' | '\x0c')) {
            return Err(HtmlError::Unparseable(format!("control character U+{:04X} in document", c as u32)));
        }
        Ok(Self { html: Html::parse_document(text) })
    }

    pub fn root(&self) -> NodeRef<'_, Node> {
        self.html.tree.root()
    }

    pub fn element(&self, id: NodeId) -> Option<ElementRef<'_>> {
        self.html.tree.get(id).and_then(ElementRef::wrap)
    }

    /// Every element in document order.
    pub fn elements(&self) -> impl Iterator<Item = ElementRef<'_>> {
        self.html.tree.root().descendants().filter_map(ElementRef::wrap)
    }

    pub fn body_is_empty(&self) -> bool {
        self.elements()
            .find(|e| e.value().name() == "body")
            .is_none_or(|b| !b.children().any(|c| c.value().is_element()))
    }

    /// All elements the locator designates, in document order.
    pub fn resolve(&self, locator: &Locator) -> Vec<NodeId> {
        let value = locator.value.as_str();
        if value.is_empty() {
            return Vec::new();
        }
        match locator.strategy {
            Strategy::ById => self.elements().filter(|e| e.value().attr("id") == Some(value)).map(|e| e.id()).collect(),
            Strategy::ByName => {
                self.elements().filter(|e| e.value().attr("name") == Some(value)).map(|e| e.id()).collect()
            }
            Strategy::ByCss => match Selector::parse(value) {
                Ok(sel) => self.html.select(&sel).map(|e| e.id()).collect(),
                Err(_) => Vec::new(),
            },
            Strategy::ByXpath => xpath::evaluate(self, value).unwrap_or_default(),
            Strategy::ByText => match text_xpath(value) {
                Some(xp) => xpath::evaluate(self, &xp).unwrap_or_default(),
                None => Vec::new(),
            },
        }
    }

    pub fn resolve_first(&self, locator: &Locator) -> Option<NodeId> {
        self.resolve(locator).into_iter().next()
    }

    /// Whitespace-collapsed text content.
    pub fn text_of(&self, id: NodeId) -> String {
        self.html.tree.get(id).map(|n| normalize_space(&string_value(n))).unwrap_or_default()
    }

    /// `html > body > form:nth-of-type(1) > input:nth-of-type(2)`
    pub fn css_path(&self, id: NodeId) -> String {
        let mut parts = Vec::new();
        let mut cur = self.html.tree.get(id);
        while let Some(node) = cur {
            let Some(el) = ElementRef::wrap(node) else { break };
            let name = el.value().name();
            let parent_is_doc = node.parent().is_none_or(|p| !p.value().is_element());
            if parent_is_doc {
                parts.push(name.to_string());
            } else {
                let index =
                    node.prev_siblings().filter_map(ElementRef::wrap).filter(|s| s.value().name() == name).count() + 1;
                parts.push(format!("{name}:nth-of-type({index})"));
            }
            cur = node.parent();
        }
        parts.reverse();
        parts.join(" > ")
    }

    pub fn serialize(&self) -> String {
        self.serialize_with(false, None)
    }

    /// Serialization without script/style elements or comments.
    pub fn pruned(&self) -> String {
        self.serialize_with(true, None)
    }

    pub fn serialize_with(&self, prune: bool, overrides: Option<&AttrOverrides>) -> String {
        let mut out = String::new();
        for child in self.html.tree.root().children() {
            write_node(child, prune, overrides, &mut out);
        }
        out
    }
}

/// The XPath form of a by-text locator: the innermost elements whose
/// whitespace-normalized text equals `value`.
pub fn text_xpath(value: &str) -> Option<String> {
    let quoted = if !value.contains('\'') {
        format!("'{value}'")
    } else if !value.contains('"') {
        format!("\"{value}\"")
    } else {
        return None;
    };
    Some(format!("//*[normalize-space(.)={quoted} and not(*[normalize-space(.)={quoted}])]"))
}

pub(crate) fn string_value(node: NodeRef<'_, Node>) -> String {
    let mut s = String::new();
    for d in node.descendants() {
        if let Node::Text(t) = d.value() {
            s.push_str(t);
        }
    }
    s
}

pub(crate) fn normalize_space(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn write_node(node: NodeRef<'_, Node>, prune: bool, overrides: Option<&AttrOverrides>, out: &mut String) {
    match node.value() {
        Node::Document | Node::Fragment => {
            for c in node.children() {
                write_node(c, prune, overrides, out);
            }
        }
        Node::Doctype(d) => {
            out.push_str("<!DOCTYPE ");
            out.push_str(d.name());
            out.push('>');
        }
        Node::Comment(c) => {
            if !prune {
                out.push_str("<!--");
                out.push_str(c);
                out.push_str("-->");
            }
        }
        Node::Text(t) => {
            let raw = node
                .parent()
                .and_then(|p| p.value().as_element().map(|e| RAW_TEXT_ELEMENTS.contains(&e.name())))
                .unwrap_or(false);
            if raw {
                out.push_str(t);
            } else {
                escape_text(t, out);
            }
        }
        Node::Element(e) => {
            let name = e.name();
            if prune && PRUNED_ELEMENTS.contains(&name) {
                return;
            }
            out.push('<');
            out.push_str(name);
            let extra = overrides.and_then(|o| o.get(&node.id()));
            let mut seen = Vec::new();
            for (k, v) in e.attrs() {
                seen.push(k);
                match extra.and_then(|x| x.get(k)) {
                    Some(None) => continue,
                    Some(Some(nv)) => write_attr(k, nv, out),
                    None => write_attr(k, v, out),
                }
            }
            if let Some(extra) = extra {
                for (k, v) in extra {
                    if let (false, Some(v)) = (seen.contains(&k.as_str()), v) {
                        write_attr(k, v, out);
                    }
                }
            }
            out.push('>');
            if VOID_ELEMENTS.contains(&name) {
                return;
            }
            for c in node.children() {
                write_node(c, prune, overrides, out);
            }
            out.push_str("</");
            out.push_str(name);
            out.push('>');
        }
        Node::ProcessingInstruction(_) => {}
    }
}

fn write_attr(k: &str, v: &str, out: &mut String) {
    out.push(' ');
    out.push_str(k);
    out.push_str("=\"");
    for c in v.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '\u{a0}' => out.push_str("&nbsp;"),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn escape_text(t: &str, out: &mut String) {
    for c in t.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\u{a0}' => out.push_str("&nbsp;"),
            c => out.push(c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAGE: &str = r#"<!DOCTYPE html><html><head><style>p{}</style><script>var x = 1 < 2;</script></head>
<body><!-- nav --><a id="headPrimary3" href="/mytrips">My Trips</a>
<form><input id="confirmationNo" name="conf"><input name="firstName"><button class="go btn">Find <b>Trip</b></button></form>
<div><span>Find Trip</span></div></body></html>"#;

    #[test]
    fn resolves_each_strategy() {
        let dom = Dom::parse(PAGE).unwrap();
        let by = |l: Locator| dom.resolve(&l).len();
        assert_eq!(by(Locator::by_id("confirmationNo")), 1);
        assert_eq!(by(Locator::by_name("firstName")), 1);
        assert_eq!(by(Locator::by_css("button.go")), 1);
        assert_eq!(by(Locator::by_css("input")), 2);
        assert_eq!(by(Locator::by_css("<<bad")), 0);
        assert_eq!(by(Locator::by_xpath("//input[@name='conf']")), 1);
        assert_eq!(by(Locator::by_text("My Trips")), 1);
        assert_eq!(by(Locator::by_id("")), 0);
    }

    #[test]
    fn by_text_is_innermost() {
        let dom = Dom::parse(PAGE).unwrap();
        let hits = dom.resolve(&Locator::by_text("Find Trip"));
        let names: Vec<_> = hits.iter().map(|id| dom.element(*id).unwrap().value().name().to_string()).collect();
        assert_eq!(names, ["button", "span"]);
    }

    #[test]
    fn css_path_round_trips() {
        let dom = Dom::parse(PAGE).unwrap();
        let id = dom.resolve_first(&Locator::by_name("firstName")).unwrap();
        let path = dom.css_path(id);
        assert_eq!(path, "html > body:nth-of-type(1) > form:nth-of-type(1) > input:nth-of-type(2)");
        assert_eq!(dom.resolve(&Locator::by_css(path)), vec![id]);
    }

    #[test]
    fn pruning_drops_script_style_comments() {
        let dom = Dom::parse(PAGE).unwrap();
        let pruned = dom.pruned();
        assert!(!pruned.contains("<script"));
        assert!(!pruned.contains("<style"));
        assert!(!pruned.contains("nav"));
        assert!(pruned.contains(r#"<input id="confirmationNo" name="conf">"#));
        let full = dom.serialize();
        assert!(full.contains("var x = 1 < 2;"));
        assert!(full.contains("<!-- nav -->"));
    }

    #[test]
    fn serialization_reparses_identically() {
        let dom = Dom::parse(PAGE).unwrap();
        let once = dom.serialize();
        assert_eq!(Dom::parse(&once).unwrap().serialize(), once);
    }

    #[test]
    fn overrides_apply() {
        let dom = Dom::parse(PAGE).unwrap();
        let id = dom.resolve_first(&Locator::by_id("confirmationNo")).unwrap();
        let mut o = AttrOverrides::new();
        o.entry(id).or_default().insert("value".into(), Some("DL\"X".into()));
        o.entry(id).or_default().insert("name".into(), None);
        let s = dom.serialize_with(true, Some(&o));
        assert!(s.contains(r#"<input id="confirmationNo" value="DL&quot;X">"#), "{s}");
    }

    #[test]
    fn binary_rejected() {
        assert!(Dom::parse("\u{0}\u{1}PNG").is_err());
        assert!(Dom::parse("<p>unclosed <b>tags").is_ok());
    }

    #[test]
    fn empty_body() {
        assert!(Dom::parse("<html><body></body></html>").unwrap().body_is_empty());
        assert!(Dom::parse("").unwrap().body_is_empty());
    }
}
