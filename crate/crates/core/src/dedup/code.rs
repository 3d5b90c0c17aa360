//! Code normalization and token-set similarity.

use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedCode {
    pub tokens: Vec<String>,
    /// Set when the lexer gave up and raw whitespace tokens were used.
    pub fallback: Option<String>,
}

impl NormalizedCode {
    pub fn token_set(&self) -> BTreeSet<String> {
        self.tokens.iter().cloned().collect()
    }

    pub fn minified(&self) -> String {
        self.tokens.join(" ")
    }
}

fn lex(src: &str) -> Result<Vec<String>, String> {
    let c: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < c.len() {
        let ch = c[i];
        if ch.is_whitespace() {
            i += 1;
        } else if c[i..].starts_with(&['<', '!', '-', '-']) {
            let end = find(&c, i + 4, &['-', '-', '>']).ok_or("unterminated markup comment")?;
            i = end + 3;
        } else if c[i..].starts_with(&['/', '*']) {
            let end = find(&c, i + 2, &['*', '/']).ok_or("unterminated block comment")?;
            i = end + 2;
        } else if c[i..].starts_with(&['/', '/']) && (i == 0 || c[i - 1] != ':') {
            while i < c.len() && c[i] != '\n' {
                i += 1;
            }
        } else if ch == '"' || ch == '\'' || ch == '`' {
            let mut j = i + 1;
            let mut body = String::new();
            loop {
                let Some(&x) = c.get(j) else {
                    return Err("unterminated string".into());
                };
                if x == '\\' {
                    if let Some(&y) = c.get(j + 1) {
                        body.push(x);
                        body.push(y);
                    }
                    j += 2;
                    continue;
                }
                if x == ch {
                    break;
                }
                body.push(if x == '"' { '\'' } else { x });
                j += 1;
            }
            out.push(format!("\"{body}\""));
            i = j + 1;
        } else if ch.is_alphanumeric() || ch == '_' || ch == '$' {
            let s = i;
            while i < c.len() && (c[i].is_alphanumeric() || matches!(c[i], '_' | '$' | '-' | '.')) {
                i += 1;
            }
            out.push(c[s..i].iter().collect());
        } else {
            out.push(ch.to_string());
            i += 1;
        }
    }
    Ok(out)
}

fn find(c: &[char], from: usize, pat: &[char]) -> Option<usize> {
    (from..c.len()).find(|&k| c[k..].starts_with(pat))
}

/// Strip markup, block and line comments, collapse whitespace, and rewrite
/// string literals with double quotes. Identifiers are left alone.
pub fn normalize_code(src: &str) -> NormalizedCode {
    match lex(src) {
        Ok(tokens) => NormalizedCode {
            tokens,
            fallback: None,
        },
        Err(e) => NormalizedCode {
            tokens: src.split_whitespace().map(String::from).collect(),
            fallback: Some(e),
        },
    }
}

pub fn code_token_jaccard(a: &str, b: &str) -> f64 {
    super::tree::jaccard(
        &normalize_code(a).token_set(),
        &normalize_code(b).token_set(),
    )
}
