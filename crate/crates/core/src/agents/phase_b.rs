//! Phase B: runtime exploitation with feedback-driven refinement.
//!
//! Per objective: one generation call, execution against the target, a
//! success judgment, and a bounded refine/re-execute loop. The embedded
//! trigger function is never modified in Phase B; a refiner output that
//! alters it is rejected and counted as a failed refinement attempt.

use serde::{Deserialize, Serialize};

use crate::executor::{execute_plan, ExecError, ExecLimits, ExecutionTrace};
use crate::trigger::{render_trigger, PlannedRequest, RequestPlan, TriggerFunction};
use crate::vuln::{AttackObjective, SuccessPredicate};

use super::exploit::{build_plan, parse_exploit, render_exploit, ExploitInstance};
use super::prompts::{self, fill};
use super::{extract_block, AgentError, AgentRole, GeneratorBackend};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveOutcome {
    pub objective_id: String,
    pub attack_result: bool,
    pub refinements_used: u32,
    pub final_exploit: Option<ExploitInstance>,
    pub traces: Vec<ExecutionTrace>,
    pub note: Option<String>,
}

/// Render a trace's final response (status line + body) as refiner feedback.
fn response_feedback(trace: &ExecutionTrace) -> String {
    match trace.final_response() {
        Some(resp) => {
            let mut out = format!("{}\n{}", resp.status_line, resp.body_text());
            if let Some(err) = &trace.transport_error {
                out.push_str(&format!("\n(transport error: {err})"));
            }
            out
        }
        None => match &trace.transport_error {
            Some(err) => format!("(no response; transport error: {err})"),
            None => "(no response)".to_string(),
        },
    }
}

/// Decide whether `trace` satisfies the objective. Rule predicates evaluate
/// the final response; `probe_then_contains` issues its probe first;
/// `llm_judge` asks the judge agent and treats anything but an explicit
/// `attack_result: true` line as false.
pub fn judge(
    backend: &dyn GeneratorBackend,
    trace: &ExecutionTrace,
    objective: &AttackObjective,
    target: &str,
    limits: &ExecLimits,
) -> Result<bool, AgentError> {
    if trace.responses.is_empty() {
        return Ok(false);
    }
    let final_resp = trace.final_response().expect("non-empty trace");
    match &objective.success {
        SuccessPredicate::StatusEquals { status } => Ok(final_resp.status == *status),
        SuccessPredicate::BodyContains { needle } => {
            Ok(contains_bytes(&final_resp.body, needle.as_bytes()))
        }
        SuccessPredicate::BodyMatchesRegex { pattern } => {
            let re = regex::Regex::new(pattern)
                .map_err(|e| AgentError::TestcaseParse(format!("predicate regex: {e}")))?;
            Ok(re.is_match(&final_resp.body_text()))
        }
        SuccessPredicate::ProbeThenContains { probe_method, probe_path, needle } => {
            let plan = RequestPlan {
                requests: vec![PlannedRequest {
                    method: probe_method.clone(),
                    path: probe_path.as_bytes().to_vec(),
                    headers: vec![],
                    body: None,
                }],
            };
            match execute_plan(&plan, target, limits) {
                Ok(probe_trace) => Ok(probe_trace
                    .final_response()
                    .map(|r| contains_bytes(&r.body, needle.as_bytes()))
                    .unwrap_or(false)),
                Err(_) => Ok(false),
            }
        }
        SuccessPredicate::LlmJudge => {
            let prompt = fill(
                prompts::A5_JUDGE,
                &[("objective", &objective.text), ("response", &response_feedback(trace))],
            );
            let out = backend
                .complete(AgentRole::A5Judge, &prompt)
                .map_err(|e| AgentError::Backend { attempt: 0, source: e })?;
            Ok(out
                .lines()
                .any(|l| l.trim() == "attack_result: true"))
        }
    }
}

fn contains_bytes(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

enum Attempt {
    Exploit(ExploitInstance),
    Unusable(String),
}

fn parse_attempt(response: &str, baseline: Option<&str>) -> Attempt {
    let Some(block) = extract_block(response, "exploit") else {
        return Attempt::Unusable("no ```exploit fenced block in agent output".to_string());
    };
    match parse_exploit(&block) {
        Ok(exploit) => {
            if let Some(base) = baseline {
                if render_trigger(&exploit.trigger) != base {
                    return Attempt::Unusable(
                        "embedded trigger function was modified; it must stay byte-identical"
                            .to_string(),
                    );
                }
            }
            Attempt::Exploit(exploit)
        }
        Err(e) => Attempt::Unusable(format!("exploit parse error: {e}")),
    }
}

/// Run all objectives independently against `target`. `trigger` is the
/// validated Phase A output; `None` means the no-abstraction ablation, where
/// the generator sees raw vulnerability information and the immutability
/// baseline is its own first parseable exploit.
#[allow(clippy::too_many_arguments)]
pub fn phase_b(
    backend: &dyn GeneratorBackend,
    trigger: Option<&TriggerFunction>,
    vulnerability_info: &str,
    target: &str,
    objectives: &[AttackObjective],
    budget: u32,
    limits: &ExecLimits,
) -> Result<Vec<ObjectiveOutcome>, AgentError> {
    let mut outcomes = Vec::with_capacity(objectives.len());
    for objective in objectives {
        outcomes.push(run_objective(
            backend,
            trigger,
            vulnerability_info,
            target,
            objective,
            budget,
            limits,
        )?);
    }
    Ok(outcomes)
}

fn run_objective(
    backend: &dyn GeneratorBackend,
    trigger: Option<&TriggerFunction>,
    vulnerability_info: &str,
    target: &str,
    objective: &AttackObjective,
    budget: u32,
    limits: &ExecLimits,
) -> Result<ObjectiveOutcome, AgentError> {
    let trigger_source = trigger.map(render_trigger);
    let a4_prompt = fill(
        prompts::A4_GENERATOR,
        &[
            ("target_url", target),
            ("objective_id", &objective.objective_id),
            ("objective", &objective.text),
            (
                "trigger_source",
                trigger_source.as_deref().unwrap_or("(no trigger function; work from the vulnerability information)"),
            ),
            ("vulnerability_info", vulnerability_info),
        ],
    );
    let a4_out = backend
        .complete(AgentRole::A4ExploitGen, &a4_prompt)
        .map_err(|e| AgentError::Backend { attempt: 0, source: e })?;

    // immutability baseline: Phase A trigger, else first parseable exploit's
    let mut baseline = trigger_source.clone();
    let mut attempt = parse_attempt(&a4_out, baseline.as_deref());
    if baseline.is_none() {
        if let Attempt::Exploit(e) = &attempt {
            baseline = Some(render_trigger(&e.trigger));
        }
    }

    let mut refinements_used = 0u32;
    let mut traces: Vec<ExecutionTrace> = Vec::new();
    let mut final_exploit: Option<ExploitInstance> = None;
    let mut note: Option<String> = None;
    let mut success = false;

    loop {
        let feedback = match &attempt {
            Attempt::Exploit(exploit) => {
                final_exploit = Some(exploit.clone());
                match build_plan(exploit) {
                    Ok(plan) => match execute_plan(&plan, target, limits) {
                        Ok(trace) => {
                            let ok = judge(backend, &trace, objective, target, limits)?;
                            let fb = response_feedback(&trace);
                            traces.push(trace);
                            if ok {
                                success = true;
                                break;
                            }
                            fb
                        }
                        Err(e @ (ExecError::TargetUnreachable { .. } | ExecError::Timeout { .. })) => {
                            note = Some(format!("transport: {e}"));
                            break;
                        }
                        Err(e) => {
                            note = Some(format!("execution: {e}"));
                            break;
                        }
                    },
                    Err(e) => format!("exploit could not be instantiated: {e}"),
                }
            }
            Attempt::Unusable(msg) => msg.clone(),
        };

        if refinements_used >= budget {
            break;
        }
        let exploit_source = match &attempt {
            Attempt::Exploit(e) => render_exploit(e),
            Attempt::Unusable(_) => a4_out.clone(),
        };
        let a6_prompt = fill(
            prompts::A6_REFINER,
            &[
                ("objective", &objective.text),
                ("exploit_source", &exploit_source),
                ("response", &feedback),
            ],
        );
        let a6_out = backend
            .complete(AgentRole::A6ExploitRefine, &a6_prompt)
            .map_err(|e| AgentError::Backend { attempt: refinements_used + 1, source: e })?;
        refinements_used += 1;
        attempt = parse_attempt(&a6_out, baseline.as_deref());
    }

    Ok(ObjectiveOutcome {
        objective_id: objective.objective_id.clone(),
        attack_result: success,
        refinements_used,
        final_exploit,
        traces,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::ResponseRecord;
    use crate::vuln::ObjectiveCategory;

    fn trace_with(status: u16, body: &str) -> ExecutionTrace {
        ExecutionTrace {
            responses: vec![ResponseRecord {
                sent_digest: "d".into(),
                status,
                status_line: format!("HTTP/1.1 {status} X"),
                headers: vec![],
                body: body.as_bytes().to_vec(),
                truncated: false,
                elapsed_ms: 1,
            }],
            transport_error: None,
        }
    }

    fn objective(success: SuccessPredicate) -> AttackObjective {
        AttackObjective {
            objective_id: "o1".into(),
            category: ObjectiveCategory::Rce,
            text: "check".into(),
            success,
        }
    }

    fn nop_backend() -> crate::agents::MockBackend {
        crate::agents::MockBackend::new(vec![])
    }

    #[test]
    fn body_contains_predicate() {
        let b = nop_backend();
        let limits = ExecLimits::default();
        let obj = objective(SuccessPredicate::BodyContains { needle: "uid=".into() });
        assert!(judge(&b, &trace_with(200, "uid=0(root) gid=0(root)"), &obj, "http://x:1", &limits).unwrap());
        assert!(!judge(&b, &trace_with(200, "nope"), &obj, "http://x:1", &limits).unwrap());
    }

    #[test]
    fn status_equals_predicate() {
        let b = nop_backend();
        let limits = ExecLimits::default();
        let obj = objective(SuccessPredicate::StatusEquals { status: 200 });
        assert!(!judge(&b, &trace_with(403, ""), &obj, "http://x:1", &limits).unwrap());
        assert!(judge(&b, &trace_with(200, ""), &obj, "http://x:1", &limits).unwrap());
    }

    #[test]
    fn llm_judge_parses_attack_result_line() {
        let limits = ExecLimits::default();
        let obj = objective(SuccessPredicate::LlmJudge);
        let yes = crate::agents::MockBackend::always(AgentRole::A5Judge, "attack_result: true");
        assert!(judge(&yes, &trace_with(200, "x"), &obj, "http://x:1", &limits).unwrap());
        let garbage = crate::agents::MockBackend::always(AgentRole::A5Judge, "definitely maybe");
        assert!(!judge(&garbage, &trace_with(200, "x"), &obj, "http://x:1", &limits).unwrap());
    }

    #[test]
    fn empty_trace_is_failure() {
        let b = nop_backend();
        let limits = ExecLimits::default();
        let obj = objective(SuccessPredicate::StatusEquals { status: 200 });
        assert!(!judge(&b, &ExecutionTrace::default(), &obj, "http://x:1", &limits).unwrap());
    }
}
