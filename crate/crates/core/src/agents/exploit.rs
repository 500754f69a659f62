//! Exploit instances as data: mode + bindings + auxiliary requests, with the
//! trigger function embedded verbatim. Because the representation is data,
//! refiner outputs are parseable and the "trigger never changes in Phase B"
//! rule is a mechanical byte comparison on the rendered embedded trigger.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::trigger::{
    self, instantiate_templates, parse_trigger, render_trigger, DslError, InstantiateError,
    RequestPlan, RequestTemplate, TriggerFunction,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploitInstance {
    pub objective_id: String,
    pub mode: String,
    pub bindings: BTreeMap<String, String>,
    pub prologue: Vec<RequestTemplate>,
    pub epilogue: Vec<RequestTemplate>,
    pub trigger: TriggerFunction,
}

fn syntax(line: usize, expected: &str) -> DslError {
    DslError::Syntax { line, expected: expected.to_string() }
}

/// Parse an `exploit` block: `objective <id>`, `mode <name>`, zero or more
/// `bind <param> <value>` lines, optional `prologue:` / `epilogue:` request
/// sections, then the embedded trigger as a `trigger <<DELIM` heredoc.
pub fn parse_exploit(text: &str) -> Result<ExploitInstance, DslError> {
    let mut lines = trigger::Lines::new(text);

    let (ln, line) = lines.next().ok_or_else(|| syntax(1, "'objective <id>'"))?;
    let objective_id = line
        .strip_prefix("objective ")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| syntax(ln, "'objective <id>'"))?
        .to_string();

    let (ln, line) = lines.next().ok_or_else(|| syntax(ln + 1, "'mode <name>'"))?;
    let mode = line
        .strip_prefix("mode ")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| syntax(ln, "'mode <name>'"))?
        .to_string();

    let mut bindings = BTreeMap::new();
    while let Some((ln, line)) = lines.peek() {
        let Some(rest) = line.strip_prefix("bind ") else { break };
        lines.next();
        let (name, value) = rest
            .split_once(' ')
            .ok_or_else(|| syntax(ln, "'bind <param> <value>'"))?;
        bindings.insert(name.trim().to_string(), value.to_string());
    }

    let mut prologue = Vec::new();
    let mut epilogue = Vec::new();
    for (section, out) in [("prologue:", &mut prologue), ("epilogue:", &mut epilogue)] {
        if let Some((_, line)) = lines.peek() {
            if line == section {
                lines.next();
                while let Some((_, line)) = lines.peek() {
                    if line != "request:" {
                        break;
                    }
                    lines.next();
                    out.push(trigger::parse_request_block(&mut lines)?);
                }
            }
        }
    }

    let (ln, line) = lines
        .next()
        .ok_or_else(|| syntax(ln + 1, "'trigger <<DELIM'"))?;
    let delim = line
        .strip_prefix("trigger <<")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| syntax(ln, "'trigger <<DELIM'"))?
        .to_string();
    let trig_source = lines.heredoc(&delim, ln)?;
    let trigger = parse_trigger(&trig_source)?;

    Ok(ExploitInstance { objective_id, mode, bindings, prologue, epilogue, trigger })
}

/// Canonical text form; the embedded trigger renders through
/// [`render_trigger`] so byte comparison of rendered exploits implies byte
/// comparison of rendered triggers.
pub fn render_exploit(exploit: &ExploitInstance) -> String {
    let mut out = String::new();
    out.push_str(&format!("objective {}\n", exploit.objective_id));
    out.push_str(&format!("mode {}\n", exploit.mode));
    for (k, v) in &exploit.bindings {
        out.push_str(&format!("bind {k} {v}\n"));
    }
    if !exploit.prologue.is_empty() {
        out.push_str("prologue:\n");
        for req in &exploit.prologue {
            trigger::render_request_block(&mut out, "  ", req);
        }
    }
    if !exploit.epilogue.is_empty() {
        out.push_str("epilogue:\n");
        for req in &exploit.epilogue {
            trigger::render_request_block(&mut out, "  ", req);
        }
    }
    let trig = render_trigger(&exploit.trigger);
    let delim = trigger::heredoc_delim(&trig);
    out.push_str(&format!("trigger <<{delim}\n"));
    out.push_str(&trig);
    out.push_str(&delim);
    out.push('\n');
    out
}

/// Concrete request sequence: prologue, then the trigger mode, then epilogue,
/// all under one effective binding set (trigger defaults fill gaps).
pub fn build_plan(exploit: &ExploitInstance) -> Result<RequestPlan, InstantiateError> {
    let mode = exploit
        .trigger
        .mode(&exploit.mode)
        .ok_or_else(|| InstantiateError::UnknownMode(exploit.mode.clone()))?;
    let mut effective = BTreeMap::new();
    for p in &exploit.trigger.params {
        if let Some(d) = &p.default {
            effective.insert(p.name.clone(), d.clone());
        }
    }
    for (k, v) in &exploit.bindings {
        effective.insert(k.clone(), v.clone());
    }
    let mut requests = instantiate_templates(&exploit.prologue, &effective)?;
    requests.extend(instantiate_templates(&mode.requests, &effective)?);
    requests.extend(instantiate_templates(&exploit.epilogue, &effective)?);
    Ok(RequestPlan { requests })
}
