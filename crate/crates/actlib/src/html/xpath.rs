//! A small XPath 1.0 subset over the parsed DOM.
//!
//! Supported: absolute and relative location paths with `/` and `//`, `.`
//! and `..`, name and `*` node tests, `@attr`, `text()`, predicates with
//! positions, `=`/`!=`, `and`/`or`, and the functions `normalize-space`,
//! `contains`, `starts-with`, `not`, `string`, `position`, `last`.

use ego_tree::{NodeId, NodeRef};
use scraper::Node;
use thiserror::Error;

use super::dom::{normalize_space, string_value, Dom};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("xpath: {0}")]
pub struct XPathError(pub String);

pub fn evaluate(dom: &Dom, expr: &str) -> Result<Vec<NodeId>, XPathError> {
    let tokens = tokenize(expr)?;
    let mut p = Parser { tokens, pos: 0 };
    let path = p.path()?;
    if p.pos != p.tokens.len() {
        return Err(XPathError(format!("trailing input in {expr:?}")));
    }
    let root = dom.root();
    let ctx = Ctx { node: root, position: 1, size: 1 };
    Ok(eval_path(&path, &ctx, root))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Slash,
    DoubleSlash,
    LBracket,
    RBracket,
    LParen,
    RParen,
    At,
    Comma,
    Eq,
    Neq,
    Star,
    Dot,
    DotDot,
    Name(String),
    Str(String),
    Num(f64),
}

fn tokenize(s: &str) -> Result<Vec<Tok>, XPathError> {
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '/' if chars.get(i + 1) == Some(&'/') => {
                out.push(Tok::DoubleSlash);
                i += 2;
            }
            '/' => {
                out.push(Tok::Slash);
                i += 1;
            }
            '[' => {
                out.push(Tok::LBracket);
                i += 1;
            }
            ']' => {
                out.push(Tok::RBracket);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            '@' => {
                out.push(Tok::At);
                i += 1;
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1;
            }
            '=' => {
                out.push(Tok::Eq);
                i += 1;
            }
            '!' if chars.get(i + 1) == Some(&'=') => {
                out.push(Tok::Neq);
                i += 2;
            }
            '*' => {
                out.push(Tok::Star);
                i += 1;
            }
            '.' if chars.get(i + 1) == Some(&'.') => {
                out.push(Tok::DotDot);
                i += 2;
            }
            '.' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                out.push(Tok::Dot);
                i += 1;
            }
            '\'' | '"' => {
                let end = chars[i + 1..]
                    .iter()
                    .position(|&d| d == c)
                    .ok_or_else(|| XPathError("unterminated string".into()))?;
                out.push(Tok::Str(chars[i + 1..i + 1 + end].iter().collect()));
                i += end + 2;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n = text.parse().map_err(|_| XPathError(format!("bad number {text:?}")))?;
                out.push(Tok::Num(n));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '-' | ':')) {
                    i += 1;
                }
                out.push(Tok::Name(chars[start..i].iter().collect()));
            }
            other => return Err(XPathError(format!("unexpected {other:?}"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Path {
    absolute: bool,
    steps: Vec<(bool, Step)>,
}

#[derive(Debug, Clone)]
enum Step {
    SelfNode,
    Parent,
    Element { name: Option<String>, predicates: Vec<Expr> },
}

#[derive(Debug, Clone)]
enum Expr {
    Or(Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Cmp(bool, Box<Expr>, Box<Expr>),
    Str(String),
    Num(f64),
    Attr(String),
    Text,
    Path(Path),
    Call(String, Vec<Expr>),
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok) -> Result<(), XPathError> {
        match self.next() {
            Some(ref got) if *got == t => Ok(()),
            got => Err(XPathError(format!("expected {t:?}, got {got:?}"))),
        }
    }

    fn path(&mut self) -> Result<Path, XPathError> {
        let mut absolute = false;
        let mut descend = false;
        match self.peek() {
            Some(Tok::Slash) => {
                absolute = true;
                self.pos += 1;
            }
            Some(Tok::DoubleSlash) => {
                absolute = true;
                descend = true;
                self.pos += 1;
            }
            _ => {}
        }
        let mut steps = vec![(descend, self.step()?)];
        loop {
            match self.peek() {
                Some(Tok::Slash) => {
                    self.pos += 1;
                    steps.push((false, self.step()?));
                }
                Some(Tok::DoubleSlash) => {
                    self.pos += 1;
                    steps.push((true, self.step()?));
                }
                _ => break,
            }
        }
        Ok(Path { absolute, steps })
    }

    fn step(&mut self) -> Result<Step, XPathError> {
        let name = match self.next() {
            Some(Tok::Dot) => return Ok(Step::SelfNode),
            Some(Tok::DotDot) => return Ok(Step::Parent),
            Some(Tok::Star) => None,
            Some(Tok::Name(n)) => Some(n.to_ascii_lowercase()),
            t => return Err(XPathError(format!("expected node test, got {t:?}"))),
        };
        let mut predicates = Vec::new();
        while self.peek() == Some(&Tok::LBracket) {
            self.pos += 1;
            predicates.push(self.or_expr()?);
            self.expect(Tok::RBracket)?;
        }
        Ok(Step::Element { name, predicates })
    }

    fn or_expr(&mut self) -> Result<Expr, XPathError> {
        let mut lhs = self.and_expr()?;
        while matches!(self.peek(), Some(Tok::Name(n)) if n == "or") {
            self.pos += 1;
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and_expr()?));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, XPathError> {
        let mut lhs = self.cmp_expr()?;
        while matches!(self.peek(), Some(Tok::Name(n)) if n == "and") {
            self.pos += 1;
            lhs = Expr::And(Box::new(lhs), Box::new(self.cmp_expr()?));
        }
        Ok(lhs)
    }

    fn cmp_expr(&mut self) -> Result<Expr, XPathError> {
        let lhs = self.primary()?;
        match self.peek() {
            Some(Tok::Eq) => {
                self.pos += 1;
                Ok(Expr::Cmp(true, Box::new(lhs), Box::new(self.primary()?)))
            }
            Some(Tok::Neq) => {
                self.pos += 1;
                Ok(Expr::Cmp(false, Box::new(lhs), Box::new(self.primary()?)))
            }
            _ => Ok(lhs),
        }
    }

    fn primary(&mut self) -> Result<Expr, XPathError> {
        match self.peek().cloned() {
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Expr::Str(s))
            }
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::Num(n))
            }
            Some(Tok::At) => {
                self.pos += 1;
                match self.next() {
                    Some(Tok::Name(n)) => Ok(Expr::Attr(n.to_ascii_lowercase())),
                    t => Err(XPathError(format!("expected attribute name, got {t:?}"))),
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.or_expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Name(n)) if self.tokens.get(self.pos + 1) == Some(&Tok::LParen) => {
                self.pos += 2;
                if n == "text" {
                    self.expect(Tok::RParen)?;
                    return Ok(Expr::Text);
                }
                let mut args = Vec::new();
                if self.peek() != Some(&Tok::RParen) {
                    args.push(self.or_expr()?);
                    while self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                        args.push(self.or_expr()?);
                    }
                }
                self.expect(Tok::RParen)?;
                Ok(Expr::Call(n, args))
            }
            _ => Ok(Expr::Path(self.path()?)),
        }
    }
}

#[derive(Debug, Clone)]
enum Value {
    Nodes(Vec<NodeId>),
    Strs(Vec<String>),
    Str(String),
    Num(f64),
    Bool(bool),
}

struct Ctx<'a> {
    node: NodeRef<'a, Node>,
    position: usize,
    size: usize,
}

fn eval_path<'a>(path: &Path, ctx: &Ctx<'a>, root: NodeRef<'a, Node>) -> Vec<NodeId> {
    let tree = root.tree();
    let mut current: Vec<NodeRef<'a, Node>> = vec![if path.absolute { root } else { ctx.node }];
    for (descend, step) in &path.steps {
        let mut next: Vec<NodeRef<'a, Node>> = Vec::new();
        for node in &current {
            let bases: Vec<NodeRef<'a, Node>> = if *descend { node.descendants().collect() } else { vec![*node] };
            for base in bases {
                match step {
                    Step::SelfNode => push_unique(&mut next, base),
                    Step::Parent => {
                        if let Some(p) = base.parent() {
                            push_unique(&mut next, p);
                        }
                    }
                    Step::Element { name, predicates } => {
                        let mut matched: Vec<NodeRef<'a, Node>> = base
                            .children()
                            .filter(|c| match c.value().as_element() {
                                Some(e) => name.as_deref().is_none_or(|n| e.name() == n),
                                None => false,
                            })
                            .collect();
                        for pred in predicates {
                            let size = matched.len();
                            matched = matched
                                .into_iter()
                                .enumerate()
                                .filter(|(i, n)| {
                                    let c = Ctx { node: *n, position: i + 1, size };
                                    match eval(pred, &c, root) {
                                        Value::Num(k) => (i + 1) as f64 == k,
                                        v => truthy(&v),
                                    }
                                })
                                .map(|(_, n)| n)
                                .collect();
                        }
                        for m in matched {
                            push_unique(&mut next, m);
                        }
                    }
                }
            }
        }
        current = next;
    }
    let mut ids: Vec<NodeId> = current.into_iter().filter(|n| n.value().is_element()).map(|n| n.id()).collect();
    // document order
    let order: Vec<NodeId> = tree.root().descendants().map(|n| n.id()).collect();
    ids.sort_by_key(|id| order.iter().position(|o| o == id));
    ids
}

fn push_unique<'a>(v: &mut Vec<NodeRef<'a, Node>>, n: NodeRef<'a, Node>) {
    if !v.iter().any(|x| x.id() == n.id()) {
        v.push(n);
    }
}

fn eval<'a>(e: &Expr, ctx: &Ctx<'a>, root: NodeRef<'a, Node>) -> Value {
    match e {
        Expr::Str(s) => Value::Str(s.clone()),
        Expr::Num(n) => Value::Num(*n),
        Expr::Or(a, b) => Value::Bool(truthy(&eval(a, ctx, root)) || truthy(&eval(b, ctx, root))),
        Expr::And(a, b) => Value::Bool(truthy(&eval(a, ctx, root)) && truthy(&eval(b, ctx, root))),
        Expr::Attr(name) => Value::Strs(
            ctx.node.value().as_element().and_then(|el| el.attr(name)).map(|v| vec![v.to_string()]).unwrap_or_default(),
        ),
        Expr::Text => Value::Strs(
            ctx.node
                .children()
                .filter_map(|c| match c.value() {
                    Node::Text(t) => Some(t.to_string()),
                    _ => None,
                })
                .collect(),
        ),
        Expr::Path(p) => Value::Nodes(eval_path(p, ctx, root)),
        Expr::Cmp(eq, a, b) => {
            let (a, b) = (eval(a, ctx, root), eval(b, ctx, root));
            let left = strings(&a, root);
            let right = strings(&b, root);
            let hit = match (&a, &b) {
                (Value::Num(x), _) | (_, Value::Num(x)) => {
                    let other = if matches!(a, Value::Num(_)) { &right } else { &left };
                    other.iter().any(|s| (s.trim().parse::<f64>().ok() == Some(*x)) == *eq)
                }
                _ => left.iter().any(|l| right.iter().any(|r| (l == r) == *eq)),
            };
            Value::Bool(hit)
        }
        Expr::Call(name, args) => call(name, args, ctx, root),
    }
}

fn call<'a>(name: &str, args: &[Expr], ctx: &Ctx<'a>, root: NodeRef<'a, Node>) -> Value {
    let arg_str = |i: usize| -> String {
        match args.get(i) {
            Some(a) => first_string(&eval(a, ctx, root), root),
            None => string_value(ctx.node),
        }
    };
    match name {
        "normalize-space" => Value::Str(normalize_space(&arg_str(0))),
        "string" => Value::Str(arg_str(0)),
        "contains" => Value::Bool(arg_str(0).contains(&arg_str(1))),
        "starts-with" => Value::Bool(arg_str(0).starts_with(&arg_str(1))),
        "not" => Value::Bool(!args.first().is_some_and(|a| truthy(&eval(a, ctx, root)))),
        "position" => Value::Num(ctx.position as f64),
        "last" => Value::Num(ctx.size as f64),
        _ => Value::Bool(false),
    }
}

fn strings(v: &Value, root: NodeRef<'_, Node>) -> Vec<String> {
    match v {
        Value::Nodes(ids) => ids.iter().filter_map(|id| root.tree().get(*id)).map(string_value).collect(),
        Value::Strs(s) => s.clone(),
        Value::Str(s) => vec![s.clone()],
        Value::Num(n) => vec![n.to_string()],
        Value::Bool(b) => vec![b.to_string()],
    }
}

fn first_string(v: &Value, root: NodeRef<'_, Node>) -> String {
    strings(v, root).into_iter().next().unwrap_or_default()
}

fn truthy(v: &Value) -> bool {
    match v {
        Value::Nodes(n) => !n.is_empty(),
        Value::Strs(s) => !s.is_empty(),
        Value::Str(s) => !s.is_empty(),
        Value::Num(n) => *n != 0.0 && !n.is_nan(),
        Value::Bool(b) => *b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAGE: &str = r#"<html><body>
<ul id="list"><li>one</li><li class="x">two</li><li>three</li></ul>
<form name="f"><input type="text" name="q"><input type="submit" value="Go"></form>
<a href="/a">  Home   page </a></body></html>"#;

    fn names(dom: &Dom, expr: &str) -> Vec<String> {
        evaluate(dom, expr).unwrap().into_iter().map(|id| dom.text_of(id)).collect()
    }

    #[test]
    fn positional_and_attribute_predicates() {
        let dom = Dom::parse(PAGE).unwrap();
        assert_eq!(names(&dom, "//ul/li[2]"), ["two"]);
        assert_eq!(names(&dom, "//li[last()]"), ["three"]);
        assert_eq!(names(&dom, "//li[@class='x']"), ["two"]);
        assert_eq!(names(&dom, "//li[@class]"), ["two"]);
        assert_eq!(names(&dom, "//*[@id='list']/li[position()=1]"), ["one"]);
        assert_eq!(evaluate(&dom, "//input[@type='submit' or @name='q']").unwrap().len(), 2);
    }

    #[test]
    fn text_functions() {
        let dom = Dom::parse(PAGE).unwrap();
        assert_eq!(names(&dom, "//a[normalize-space(.)='Home page']"), ["Home page"]);
        assert_eq!(names(&dom, "//li[text()='three']"), ["three"]);
        assert_eq!(names(&dom, "//li[contains(., 'tw')]"), ["two"]);
        assert_eq!(names(&dom, "//a[starts-with(@href, '/')]"), ["Home page"]);
        assert_eq!(evaluate(&dom, "//li[not(@class)]").unwrap().len(), 2);
    }

    #[test]
    fn relative_and_parent_steps() {
        let dom = Dom::parse(PAGE).unwrap();
        let forms = evaluate(&dom, "//input[@name='q']/..").unwrap();
        assert_eq!(dom.element(forms[0]).unwrap().value().name(), "form");
        assert_eq!(evaluate(&dom, "/html/body/form/input").unwrap().len(), 2);
        assert_eq!(evaluate(&dom, "//form[.//input[@value='Go']]").unwrap().len(), 1);
    }

    #[test]
    fn errors() {
        let dom = Dom::parse(PAGE).unwrap();
        assert!(evaluate(&dom, "//li[").is_err());
        assert!(evaluate(&dom, "//li['open").is_err());
        assert!(evaluate(&dom, "#id").is_err());
    }
}
