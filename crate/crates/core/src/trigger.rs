//! Trigger-function DSL: parse, render, and instantiate.
//!
//! A trigger function is the sole carrier of a vulnerability's triggering
//! semantics: fixed byte runs (kept verbatim, percent-encodings included)
//! plus named parameters, organized into named modes. Instantiation binds
//! parameters and produces a byte-exact [`RequestPlan`]; there is no
//! computation inside templates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textenc::unescape_bytes;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DslError {
    #[error("syntax error at line {line}: expected {expected}")]
    Syntax { line: usize, expected: String },
    #[error("undeclared param '{param}' in mode '{mode}'")]
    UndeclaredParam { param: String, mode: String },
    #[error("duplicate mode '{0}'")]
    DuplicateMode(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstantiateError {
    #[error("unknown mode '{0}'")]
    UnknownMode(String),
    #[error("missing binding for param '{0}'")]
    MissingBinding(String),
}

/// A text template: literal byte runs interleaved with `{param}` placeholders.
/// Literal `{` / `}` are written `{{` / `}}`; raw bytes as `\xNN`.
/// Equality and rendering are on the source text, so canonical sources
/// round-trip byte-identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Template {
    source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Lit(Vec<u8>),
    Param(String),
}

impl Template {
    pub fn parse(source: &str) -> Result<Self, String> {
        let t = Template { source: source.to_string() };
        t.segments()?;
        Ok(t)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Split into literal runs and placeholders, decoding `\xNN` in literals.
    pub fn segments(&self) -> Result<Vec<Segment>, String> {
        let mut segs = Vec::new();
        let mut lit = String::new();
        let bytes = self.source.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    lit.push('{');
                    i += 2;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    lit.push('}');
                    i += 2;
                }
                b'{' => {
                    let end = self.source[i + 1..]
                        .find('}')
                        .ok_or_else(|| "unclosed '{' placeholder".to_string())?;
                    let name = &self.source[i + 1..i + 1 + end];
                    if !is_param_name(name) {
                        return Err(format!("invalid placeholder name '{name}'"));
                    }
                    if !lit.is_empty() {
                        segs.push(Segment::Lit(unescape_bytes(&lit)?));
                        lit.clear();
                    }
                    segs.push(Segment::Param(name.to_string()));
                    i += end + 2;
                }
                b'}' => return Err("unmatched '}' (write '}}' for a literal)".to_string()),
                c => {
                    lit.push(c as char);
                    // multi-byte UTF-8: copy the raw char
                    if c >= 0x80 {
                        lit.pop();
                        let ch = self.source[i..].chars().next().unwrap();
                        lit.push(ch);
                        i += ch.len_utf8();
                        continue;
                    }
                    i += 1;
                }
            }
        }
        if !lit.is_empty() {
            segs.push(Segment::Lit(unescape_bytes(&lit)?));
        }
        Ok(segs)
    }

    pub fn param_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if let Ok(segs) = self.segments() {
            for s in segs {
                if let Segment::Param(p) = s {
                    out.insert(p);
                }
            }
        }
        out
    }

    pub fn fill(&self, bindings: &BTreeMap<String, String>) -> Result<Vec<u8>, InstantiateError> {
        let segs = self
            .segments()
            .expect("template validated at parse time");
        let mut out = Vec::new();
        for seg in segs {
            match seg {
                Segment::Lit(b) => out.extend_from_slice(&b),
                Segment::Param(p) => match bindings.get(&p) {
                    Some(v) => out.extend_from_slice(v.as_bytes()),
                    None => return Err(InstantiateError::MissingBinding(p)),
                },
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub default: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTemplate {
    pub method: String,
    pub path: Template,
    pub headers: Vec<(String, Template)>,
    pub body: Option<Template>,
}

/// One named branch of a trigger function. Order of requests is preserved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mode {
    pub name: String,
    pub requests: Vec<RequestTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerFunction {
    pub name: String,
    pub params: Vec<ParamDecl>,
    pub modes: Vec<Mode>,
}

impl TriggerFunction {
    pub fn mode(&self, name: &str) -> Option<&Mode> {
        self.modes.iter().find(|m| m.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&ParamDecl> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// A concrete, fully substituted request: no `{...}` remains, bytes are final.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedRequest {
    pub method: String,
    pub path: Vec<u8>,
    pub headers: Vec<(String, Vec<u8>)>,
    pub body: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestPlan {
    pub requests: Vec<PlannedRequest>,
}

pub fn is_param_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn syntax(line: usize, expected: &str) -> DslError {
    DslError::Syntax { line, expected: expected.to_string() }
}

/// Line cursor over DSL source. Comments (`#`) and blank lines are skipped
/// outside heredocs; heredoc bodies are taken raw.
pub(crate) struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str) -> Self {
        Lines { lines: text.lines().collect(), pos: 0 }
    }

    /// Next meaningful line, trimmed, with its 1-based number.
    pub fn peek(&mut self) -> Option<(usize, &'a str)> {
        let mut p = self.pos;
        while p < self.lines.len() {
            let t = self.lines[p].trim();
            if t.is_empty() || t.starts_with('#') {
                p += 1;
                continue;
            }
            self.pos = p;
            return Some((p + 1, t));
        }
        self.pos = p;
        None
    }

    pub fn next(&mut self) -> Option<(usize, &'a str)> {
        let r = self.peek();
        if r.is_some() {
            self.pos += 1;
        }
        r
    }

    /// Read raw lines until one equals `delim` exactly (after trim).
    pub fn heredoc(&mut self, delim: &str, start_line: usize) -> Result<String, DslError> {
        let mut body = Vec::new();
        while self.pos < self.lines.len() {
            let raw = self.lines[self.pos];
            self.pos += 1;
            if raw.trim() == delim {
                return Ok(body.join("\n"));
            }
            body.push(raw);
        }
        Err(syntax(start_line, &format!("heredoc terminator '{delim}'")))
    }
}

/// Parse one `request:` block body (after the `request:` line was consumed).
/// Shared with the test-case and exploit formats.
pub(crate) fn parse_request_block(lines: &mut Lines<'_>) -> Result<RequestTemplate, DslError> {
    let mut method: Option<String> = None;
    let mut path: Option<Template> = None;
    let mut headers = Vec::new();
    let mut body: Option<Template> = None;
    loop {
        let Some((ln, line)) = lines.peek() else { break };
        if let Some(rest) = line.strip_prefix("method ") {
            lines.next();
            let tok = rest.trim();
            if tok.is_empty() || !tok.chars().all(|c| c.is_ascii_uppercase() || c == '-') {
                return Err(syntax(ln, "an uppercase HTTP method token"));
            }
            method = Some(tok.to_string());
        } else if let Some(rest) = line.strip_prefix("path ") {
            lines.next();
            let t = Template::parse(rest.trim())
                .map_err(|e| syntax(ln, &format!("a path template ({e})")))?;
            if !(rest.trim().starts_with('/') || rest.trim().starts_with('{')) {
                return Err(syntax(ln, "path template beginning with '/' or '{'"));
            }
            path = Some(t);
        } else if let Some(rest) = line.strip_prefix("header ") {
            lines.next();
            let (name, value) = rest
                .split_once(':')
                .ok_or_else(|| syntax(ln, "'header <Name>: <template>'"))?;
            let t = Template::parse(value.trim_start())
                .map_err(|e| syntax(ln, &format!("a header value template ({e})")))?;
            headers.push((name.trim().to_string(), t));
        } else if let Some(rest) = line.strip_prefix("body <<") {
            lines.next();
            let delim = rest.trim().to_string();
            if delim.is_empty() {
                return Err(syntax(ln, "'body <<DELIM'"));
            }
            let text = lines.heredoc(&delim, ln)?;
            let t = Template::parse(&text)
                .map_err(|e| syntax(ln, &format!("a body template ({e})")))?;
            body = Some(t);
        } else {
            break;
        }
    }
    let method = method.ok_or_else(|| syntax(0, "'method <TOKEN>' in request block"))?;
    let path = path.ok_or_else(|| syntax(0, "'path <template>' in request block"))?;
    Ok(RequestTemplate { method, path, headers, body })
}

pub fn parse_trigger(text: &str) -> Result<TriggerFunction, DslError> {
    let mut lines = Lines::new(text);

    let (ln, header) = lines
        .next()
        .ok_or_else(|| syntax(1, "'trigger <name>'"))?;
    let name = header
        .strip_prefix("trigger ")
        .map(str::trim)
        .filter(|n| is_ident(n))
        .ok_or_else(|| syntax(ln, "'trigger <name>'"))?
        .to_string();

    let mut params: Vec<ParamDecl> = Vec::new();
    while let Some((ln, line)) = lines.peek() {
        let Some(rest) = line.strip_prefix("param ") else { break };
        lines.next();
        let rest = rest.trim();
        let (pname, default) = match rest.split_once(" default=") {
            Some((n, d)) => (n.trim(), Some(d.to_string())),
            None => (rest, None),
        };
        if !is_param_name(pname) {
            return Err(syntax(ln, "param name matching [a-z][a-z0-9_]*"));
        }
        if params.iter().any(|p| p.name == pname) {
            return Err(syntax(ln, &format!("unique param name (duplicate '{pname}')")));
        }
        params.push(ParamDecl { name: pname.to_string(), default });
    }

    let mut modes: Vec<Mode> = Vec::new();
    while let Some((ln, line)) = lines.peek() {
        let Some(rest) = line.strip_prefix("mode ") else {
            return Err(syntax(ln, "'mode <name>:'"));
        };
        lines.next();
        let mname = rest
            .strip_suffix(':')
            .map(str::trim)
            .filter(|n| is_ident(n))
            .ok_or_else(|| syntax(ln, "'mode <name>:'"))?
            .to_string();
        if modes.iter().any(|m| m.name == mname) {
            return Err(DslError::DuplicateMode(mname));
        }
        let mut requests = Vec::new();
        while let Some((_, line)) = lines.peek() {
            if line != "request:" {
                break;
            }
            lines.next();
            requests.push(parse_request_block(&mut lines)?);
        }
        if requests.is_empty() {
            return Err(syntax(ln, &format!("at least one request block in mode '{mname}'")));
        }
        modes.push(Mode { name: mname, requests });
    }
    if modes.is_empty() {
        return Err(syntax(ln + 1, "at least one 'mode <name>:' block"));
    }

    let tf = TriggerFunction { name, params, modes };
    // every placeholder must be declared
    for mode in &tf.modes {
        for req in &mode.requests {
            let mut used = req.path.param_names();
            for (_, v) in &req.headers {
                used.extend(v.param_names());
            }
            if let Some(b) = &req.body {
                used.extend(b.param_names());
            }
            for p in used {
                if tf.param(&p).is_none() {
                    return Err(DslError::UndeclaredParam { param: p, mode: mode.name.clone() });
                }
            }
        }
    }
    Ok(tf)
}

pub(crate) fn render_request_block(out: &mut String, indent: &str, req: &RequestTemplate) {
    out.push_str(indent);
    out.push_str("request:\n");
    out.push_str(indent);
    out.push_str(&format!("  method {}\n", req.method));
    out.push_str(indent);
    out.push_str(&format!("  path {}\n", req.path.source()));
    for (name, value) in &req.headers {
        out.push_str(indent);
        out.push_str(&format!("  header {}: {}\n", name, value.source()));
    }
    if let Some(body) = &req.body {
        let delim = heredoc_delim(body.source());
        out.push_str(indent);
        out.push_str(&format!("  body <<{delim}\n"));
        if !body.source().is_empty() {
            out.push_str(body.source());
            out.push('\n');
        }
        out.push_str(&delim);
        out.push('\n');
    }
}

pub(crate) fn heredoc_delim(body: &str) -> String {
    let mut delim = "EOF".to_string();
    let mut n = 0;
    while body.lines().any(|l| l.trim() == delim) {
        n += 1;
        delim = format!("EOF{n}");
    }
    delim
}

/// Canonical text form: byte-identical for structurally equal inputs, and
/// a fixpoint of `parse_trigger` followed by `render_trigger`.
pub fn render_trigger(tf: &TriggerFunction) -> String {
    let mut out = String::new();
    out.push_str(&format!("trigger {}\n", tf.name));
    for p in &tf.params {
        match &p.default {
            Some(d) => out.push_str(&format!("param {} default={}\n", p.name, d)),
            None => out.push_str(&format!("param {}\n", p.name)),
        }
    }
    for mode in &tf.modes {
        out.push_str(&format!("mode {}:\n", mode.name));
        for req in &mode.requests {
            render_request_block(&mut out, "  ", req);
        }
    }
    out
}

pub(crate) fn instantiate_templates(
    requests: &[RequestTemplate],
    bindings: &BTreeMap<String, String>,
) -> Result<Vec<PlannedRequest>, InstantiateError> {
    let mut out = Vec::with_capacity(requests.len());
    for req in requests {
        let path = req.path.fill(bindings)?;
        let mut headers = Vec::with_capacity(req.headers.len());
        for (name, value) in &req.headers {
            headers.push((name.clone(), value.fill(bindings)?));
        }
        let body = match &req.body {
            Some(b) => Some(b.fill(bindings)?),
            None => None,
        };
        out.push(PlannedRequest { method: req.method.clone(), path, headers, body });
    }
    Ok(out)
}

/// Bind `mode` with `bindings` (declared defaults fill any gaps) and produce
/// the concrete request plan. Only the named mode's templates are read.
pub fn instantiate(
    tf: &TriggerFunction,
    mode: &str,
    bindings: &BTreeMap<String, String>,
) -> Result<RequestPlan, InstantiateError> {
    let m = tf
        .mode(mode)
        .ok_or_else(|| InstantiateError::UnknownMode(mode.to_string()))?;
    let mut effective = BTreeMap::new();
    for p in &tf.params {
        if let Some(d) = &p.default {
            effective.insert(p.name.clone(), d.clone());
        }
    }
    for (k, v) in bindings {
        effective.insert(k.clone(), v.clone());
    }
    Ok(RequestPlan { requests: instantiate_templates(&m.requests, &effective)? })
}
