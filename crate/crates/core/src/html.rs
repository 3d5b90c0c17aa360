//! Tolerant HTML tokenizer and element-tree builder.
//!
//! Only what the dedup views and the mock renderer need: element names in
//! document order, attributes, and text content. Malformed input never fails;
//! problems are collected in [`Dom::errors`].

use std::collections::HashMap;

const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];
const RAW_TEXT_ELEMENTS: &[&str] = &["script", "style", "textarea", "title"];

pub const ROOT_TAG: &str = "#document";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Doctype,
    Comment(String),
    Text(String),
    Start {
        name: String,
        attrs: Vec<(String, String)>,
        self_closing: bool,
    },
    End {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub tag: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<usize>,
    pub text: String,
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }
}

/// Arena-allocated element tree; index 0 is the synthetic document root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dom {
    pub nodes: Vec<Element>,
    pub errors: Vec<String>,
}

impl Dom {
    pub fn root(&self) -> &Element {
        &self.nodes[0]
    }

    /// Number of real elements (the synthetic root excluded).
    pub fn element_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Element indices in depth-first preorder, root first.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            out.push(i);
            stack.extend(self.nodes[i].children.iter().rev());
        }
        out
    }

    pub fn depth_of_each(&self) -> HashMap<usize, usize> {
        let mut depth = HashMap::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            depth.insert(i, d);
            for &c in &self.nodes[i].children {
                stack.push((c, d + 1));
            }
        }
        depth
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == ':'
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    errors: Vec<String>,
}

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn bump_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn take_name(&mut self) -> String {
        let r = self.rest();
        let end = r.find(|c: char| !is_name_char(c)).unwrap_or(r.len());
        self.pos += end;
        r[..end].to_ascii_lowercase()
    }

    fn take_attr_value(&mut self) -> String {
        let r = self.rest();
        if let Some(q) = r.chars().next().filter(|c| *c == '"' || *c == '\'') {
            match r[1..].find(q) {
                Some(end) => {
                    self.pos += end + 2;
                    r[1..end + 1].to_string()
                }
                None => {
                    self.errors
                        .push(format!("unterminated attribute value at {}", self.pos));
                    self.pos = self.src.len();
                    r[1..].to_string()
                }
            }
        } else {
            let end = r
                .find(|c: char| c.is_whitespace() || c == '>')
                .unwrap_or(r.len());
            let end = if r[..end].ends_with('/') && r[end..].starts_with('>') {
                end - 1
            } else {
                end
            };
            self.pos += end;
            r[..end].to_string()
        }
    }

    fn tag(&mut self) -> Option<Token> {
        // at '<'
        let r = self.rest();
        if let Some(body) = r.strip_prefix("<!--") {
            let (text, adv) = match body.find("-->") {
                Some(end) => (body[..end].to_string(), 4 + end + 3),
                None => {
                    self.errors
                        .push(format!("unterminated comment at {}", self.pos));
                    (body.to_string(), r.len())
                }
            };
            self.pos += adv;
            return Some(Token::Comment(text));
        }
        if r.starts_with("<!") || r.starts_with("<?") {
            let end = r.find('>').map(|e| e + 1).unwrap_or(r.len());
            self.pos += end;
            return Some(Token::Doctype);
        }
        let closing = r.starts_with("</");
        let name_start = if closing { 2 } else { 1 };
        if !r[name_start..].starts_with(|c: char| c.is_ascii_alphabetic()) {
            return None;
        }
        self.pos += name_start;
        let name = self.take_name();
        let mut attrs = Vec::new();
        let mut self_closing = false;
        loop {
            self.bump_ws();
            let r = self.rest();
            if r.is_empty() {
                self.errors.push(format!("unterminated tag <{name}>"));
                break;
            }
            if let Some(after) = r.strip_prefix("/>") {
                self_closing = true;
                self.pos = self.src.len() - after.len();
                break;
            }
            if r.starts_with('>') {
                self.pos += 1;
                break;
            }
            if r.starts_with('/') {
                self.pos += 1;
                continue;
            }
            let key = self.take_name();
            if key.is_empty() {
                // skip a junk character
                self.pos += r.chars().next().map(char::len_utf8).unwrap_or(1);
                continue;
            }
            self.bump_ws();
            let value = if self.rest().starts_with('=') {
                self.pos += 1;
                self.bump_ws();
                self.take_attr_value()
            } else {
                String::new()
            };
            attrs.push((key, value));
        }
        Some(if closing {
            Token::End { name }
        } else {
            Token::Start {
                name,
                attrs,
                self_closing,
            }
        })
    }
}

/// Split markup into tokens.
pub fn tokenize(src: &str) -> (Vec<Token>, Vec<String>) {
    let mut lx = Lexer {
        src,
        pos: 0,
        errors: Vec::new(),
    };
    let mut out = Vec::new();
    let mut text = String::new();
    while lx.pos < src.len() {
        let r = lx.rest();
        if r.starts_with('<') {
            let save = lx.pos;
            if let Some(tok) = lx.tag() {
                if !text.is_empty() {
                    out.push(Token::Text(std::mem::take(&mut text)));
                }
                let raw_name = match &tok {
                    Token::Start {
                        name,
                        self_closing: false,
                        ..
                    } if RAW_TEXT_ELEMENTS.contains(&name.as_str()) => Some(name.clone()),
                    _ => None,
                };
                out.push(tok);
                if let Some(name) = raw_name {
                    let close = format!("</{name}");
                    let rest = lx.rest();
                    let lower = rest.to_ascii_lowercase();
                    let end = lower.find(&close).unwrap_or_else(|| {
                        lx.errors.push(format!("unterminated <{name}>"));
                        rest.len()
                    });
                    if end > 0 {
                        out.push(Token::Text(rest[..end].to_string()));
                    }
                    lx.pos += end;
                }
                continue;
            }
            lx.pos = save + 1;
            text.push('<');
            continue;
        }
        let c = r.chars().next().unwrap();
        text.push(c);
        lx.pos += c.len_utf8();
    }
    if !text.is_empty() {
        out.push(Token::Text(text));
    }
    (out, lx.errors)
}

/// Build the element tree.
pub fn parse(src: &str) -> Dom {
    let (tokens, mut errors) = tokenize(src);
    let mut nodes = vec![Element {
        tag: ROOT_TAG.to_string(),
        attrs: Vec::new(),
        children: Vec::new(),
        text: String::new(),
    }];
    let mut stack = vec![0usize];
    for tok in tokens {
        match tok {
            Token::Start {
                name,
                attrs,
                self_closing,
            } => {
                let idx = nodes.len();
                let parent = *stack.last().unwrap();
                nodes.push(Element {
                    tag: name.clone(),
                    attrs,
                    children: Vec::new(),
                    text: String::new(),
                });
                nodes[parent].children.push(idx);
                if !self_closing && !VOID_ELEMENTS.contains(&name.as_str()) {
                    stack.push(idx);
                }
            }
            Token::End { name } => {
                if VOID_ELEMENTS.contains(&name.as_str()) {
                    continue;
                }
                match stack.iter().rposition(|&i| i != 0 && nodes[i].tag == name) {
                    Some(pos) => {
                        if pos + 1 != stack.len() {
                            errors.push(format!(
                                "implicitly closed {} element(s) before </{name}>",
                                stack.len() - pos - 1
                            ));
                        }
                        stack.truncate(pos);
                    }
                    None => errors.push(format!("stray </{name}>")),
                }
            }
            Token::Text(t) => {
                let top = *stack.last().unwrap();
                nodes[top].text.push_str(&t);
            }
            Token::Comment(_) | Token::Doctype => {}
        }
    }
    if stack.len() > 1 {
        errors.push(format!(
            "{} unclosed element(s) at end of input",
            stack.len() - 1
        ));
    }
    Dom { nodes, errors }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(d: &Dom) -> Vec<&str> {
        d.preorder()
            .into_iter()
            .map(|i| d.nodes[i].tag.as_str())
            .collect()
    }

    #[test]
    fn basic_tree() {
        let d = parse("<!DOCTYPE html><html><head><title>x</title></head><body><h1 class='a'>Hi</h1><br><p>t</p></body></html>");
        assert_eq!(
            tags(&d),
            vec![
                "#document",
                "html",
                "head",
                "title",
                "body",
                "h1",
                "br",
                "p"
            ]
        );
        assert!(d.errors.is_empty(), "{:?}", d.errors);
        let h1 = d.nodes.iter().find(|e| e.tag == "h1").unwrap();
        assert_eq!(h1.attr("class"), Some("a"));
        assert_eq!(h1.text, "Hi");
    }

    #[test]
    fn script_is_raw_text() {
        let d =
            parse("<body><script>if (a < b && c > d) { x = '<div>'; }</script><div></div></body>");
        assert_eq!(tags(&d), vec!["#document", "body", "script", "div"]);
        assert!(d.nodes[2].text.contains("'<div>'"));
    }

    #[test]
    fn tolerant_of_garbage() {
        let d = parse("<div><span>a</div></p> 1 < 2 <img src=x.png/>");
        assert_eq!(tags(&d), vec!["#document", "div", "span", "img"]);
        assert!(!d.errors.is_empty());
        let d = parse("<div class=\"unterminated");
        assert_eq!(d.element_count(), 1);
        assert!(!d.errors.is_empty());
    }

    #[test]
    fn case_insensitive_names() {
        let d = parse("<DIV><P>x</p></div>");
        assert_eq!(tags(&d), vec!["#document", "div", "p"]);
        assert!(d.errors.is_empty());
    }
}
