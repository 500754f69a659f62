//! Test-driven validation of trigger functions.
//!
//! A test case instantiates the trigger function under one or more modes and
//! asserts the expected HTTP semantics byte-exactly. Checks run in a fixed
//! order (method, URL path, headers, body) and the first mismatch terminates
//! with a localized message, giving the refiner one unambiguous signal.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::textenc::{escape_bytes, truncate_middle, unescape_bytes};
use crate::trigger::{self, instantiate, DslError, TriggerFunction};

const MESSAGE_VALUE_CAP: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExpectedRequest {
    pub method: Option<String>,
    pub path: Option<Vec<u8>>,
    pub headers: Vec<(String, Vec<u8>)>,
    pub body: Option<Vec<u8>>,
}

impl ExpectedRequest {
    pub fn has_assertions(&self) -> bool {
        self.method.is_some() || self.path.is_some() || !self.headers.is_empty() || self.body.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStep {
    pub mode: String,
    pub bindings: BTreeMap<String, String>,
    pub expected: ExpectedRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerTestCase {
    pub steps: Vec<CaseStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Method,
    UrlPath,
    Header(String),
    Body,
    Instantiation,
}

impl Component {
    fn display(&self) -> String {
        match self {
            Component::Method => "HTTP Method".to_string(),
            Component::UrlPath => "URL Path".to_string(),
            Component::Header(name) => format!("Header {name}"),
            Component::Body => "Body".to_string(),
            Component::Instantiation => "Instantiation".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub passed: bool,
    pub message: String,
    pub failing_step: Option<usize>,
    pub component: Option<Component>,
}

impl ValidationResult {
    pub fn pass() -> Self {
        ValidationResult {
            passed: true,
            message: "Test passed.".to_string(),
            failing_step: None,
            component: None,
        }
    }

    fn fail(step: usize, component: Component, message: String) -> Self {
        ValidationResult { passed: false, message, failing_step: Some(step), component: Some(component) }
    }
}

fn mismatch(step: usize, component: Component, expected: &[u8], got: &[u8]) -> ValidationResult {
    let exp = truncate_middle(&escape_bytes(expected), MESSAGE_VALUE_CAP);
    let got = truncate_middle(&escape_bytes(got), MESSAGE_VALUE_CAP);
    let msg = format!("{} Mismatch: Expected '{}', got '{}'", component.display(), exp, got);
    ValidationResult::fail(step, component, msg)
}

/// Run the test case. Steps are evaluated in order; within a step the checks
/// run method, URL path, headers, body; the first mismatch wins. Assertions
/// apply to the first request of the step's instantiated plan. Instantiation
/// failures never abort: they become a localized failure result.
pub fn run_testcase(tf: &TriggerFunction, tc: &TriggerTestCase) -> ValidationResult {
    for (idx, step) in tc.steps.iter().enumerate() {
        let plan = match instantiate(tf, &step.mode, &step.bindings) {
            Ok(p) => p,
            Err(e) => {
                return ValidationResult::fail(
                    idx,
                    Component::Instantiation,
                    format!("Instantiation Error: {e}"),
                );
            }
        };
        let Some(req) = plan.requests.first() else {
            return ValidationResult::fail(
                idx,
                Component::Instantiation,
                "Instantiation Error: empty request plan".to_string(),
            );
        };
        let exp = &step.expected;
        if let Some(method) = &exp.method {
            if method != &req.method {
                return mismatch(idx, Component::Method, method.as_bytes(), req.method.as_bytes());
            }
        }
        if let Some(path) = &exp.path {
            if path != &req.path {
                return mismatch(idx, Component::UrlPath, path, &req.path);
            }
        }
        for (name, value) in &exp.headers {
            let got = req
                .headers
                .iter()
                .find(|(n, _)| n.eq_ignore_ascii_case(name))
                .map(|(_, v)| v.as_slice())
                .unwrap_or(b"");
            if got != value.as_slice() {
                return mismatch(idx, Component::Header(name.clone()), value, got);
            }
        }
        if let Some(body) = &exp.body {
            let got = req.body.as_deref().unwrap_or(b"");
            if got != body.as_slice() {
                return mismatch(idx, Component::Body, body, got);
            }
        }
    }
    ValidationResult::pass()
}

fn syntax(line: usize, expected: &str) -> DslError {
    DslError::Syntax { line, expected: expected.to_string() }
}

/// Parse a `.trigtest` source: `case:` then one or more
/// `step mode=<name> [k=v ...]` lines, each followed by `expect` lines.
pub fn parse_testcase(text: &str) -> Result<TriggerTestCase, DslError> {
    let mut lines = trigger::Lines::new(text);
    let (ln, head) = lines.next().ok_or_else(|| syntax(1, "'case:'"))?;
    if head != "case:" {
        return Err(syntax(ln, "'case:'"));
    }
    let mut steps = Vec::new();
    while let Some((ln, line)) = lines.next() {
        let Some(rest) = line.strip_prefix("step ") else {
            return Err(syntax(ln, "'step mode=<name> [k=v ...]'"));
        };
        let mut mode: Option<String> = None;
        let mut bindings = BTreeMap::new();
        for tok in rest.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| syntax(ln, "'k=v' tokens on step line"))?;
            if k == "mode" {
                mode = Some(v.to_string());
            } else {
                bindings.insert(k.to_string(), v.to_string());
            }
        }
        let mode = mode.ok_or_else(|| syntax(ln, "'mode=<name>' on step line"))?;
        let mut expected = ExpectedRequest::default();
        while let Some((eln, eline)) = lines.peek() {
            let Some(rest) = eline.strip_prefix("expect ") else { break };
            lines.next();
            if let Some(m) = rest.strip_prefix("method ") {
                expected.method = Some(m.trim().to_string());
            } else if let Some(p) = rest.strip_prefix("path ") {
                let bytes = unescape_bytes(p.trim())
                    .map_err(|e| syntax(eln, &format!("path bytes ({e})")))?;
                expected.path = Some(bytes);
            } else if let Some(h) = rest.strip_prefix("header ") {
                let (name, value) = h
                    .split_once(':')
                    .ok_or_else(|| syntax(eln, "'expect header <Name>: <bytes>'"))?;
                let bytes = unescape_bytes(value.trim_start())
                    .map_err(|e| syntax(eln, &format!("header bytes ({e})")))?;
                expected.headers.push((name.trim().to_string(), bytes));
            } else if let Some(rest) = rest.strip_prefix("body <<") {
                let delim = rest.trim().to_string();
                let text = lines.heredoc(&delim, eln)?;
                let bytes = unescape_bytes(&text)
                    .map_err(|e| syntax(eln, &format!("body bytes ({e})")))?;
                expected.body = Some(bytes);
            } else {
                return Err(syntax(eln, "'expect method|path|header|body ...'"));
            }
        }
        if !expected.has_assertions() {
            return Err(syntax(ln, "at least one 'expect' assertion per step"));
        }
        steps.push(CaseStep { mode, bindings, expected });
    }
    if steps.is_empty() {
        return Err(syntax(ln + 1, "at least one step"));
    }
    Ok(TriggerTestCase { steps })
}

/// Canonical text form; fixpoint of parse followed by render.
pub fn render_testcase(tc: &TriggerTestCase) -> String {
    let mut out = String::from("case:\n");
    for step in &tc.steps {
        out.push_str(&format!("step mode={}", step.mode));
        for (k, v) in &step.bindings {
            out.push_str(&format!(" {k}={v}"));
        }
        out.push('\n');
        let exp = &step.expected;
        if let Some(m) = &exp.method {
            out.push_str(&format!("expect method {m}\n"));
        }
        if let Some(p) = &exp.path {
            out.push_str(&format!("expect path {}\n", escape_bytes(p)));
        }
        for (name, value) in &exp.headers {
            out.push_str(&format!("expect header {}: {}\n", name, escape_bytes(value)));
        }
        if let Some(b) = &exp.body {
            let text = escape_bytes(b);
            let delim = trigger::heredoc_delim(&text);
            out.push_str(&format!("expect body <<{delim}\n"));
            if !text.is_empty() {
                out.push_str(&text);
                out.push('\n');
            }
            out.push_str(&delim);
            out.push('\n');
        }
    }
    out
}
