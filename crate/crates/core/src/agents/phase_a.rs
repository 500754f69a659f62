//! Phase A: trigger-function construction with test-driven validation.
//!
//! One extraction call, one test-case generation call, then a bounded
//! validate/refine loop. Unparseable agent output is not fatal: it counts as
//! a failed validation (component `Instantiation`) and is fed back to the
//! refiner like any other failure.

use serde::{Deserialize, Serialize};

use crate::validation::{run_testcase, Component, TriggerTestCase, ValidationResult};
use crate::vuln::VulnRecord;

use super::prompts::{self, fill};
use super::{extract_block, AgentError, AgentRole, GeneratorBackend};

pub const DEFAULT_BUDGET: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseAStatus {
    Validated,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseAOutcome {
    pub status: PhaseAStatus,
    pub trigger: Option<crate::trigger::TriggerFunction>,
    /// Absent only under the no-validation ablation.
    pub testcase: Option<TriggerTestCase>,
    pub refinements_used: u32,
    pub transcript: Vec<(u32, ValidationResult)>,
}

/// Render the vulnerability information block handed to agents.
pub fn vulnerability_info_text(vuln: &VulnRecord) -> String {
    let mut out = format!("CVE: {}\nDescription: {}\n", vuln.id, vuln.description);
    for r in &vuln.references {
        out.push_str(&format!("\nReference [{}]:\n{}\n", r.source_label, r.content));
    }
    out
}

fn parse_agent_trigger(response: &str) -> Result<crate::trigger::TriggerFunction, String> {
    let block = extract_block(response, "trig")
        .ok_or_else(|| "no ```trig fenced block in agent output".to_string())?;
    crate::trigger::parse_trigger(&block).map_err(|e| e.to_string())
}

fn parse_failure(idx_attempt: u32, detail: &str) -> (u32, ValidationResult) {
    (
        idx_attempt,
        ValidationResult {
            passed: false,
            message: format!("Instantiation Error: {detail}"),
            failing_step: Some(0),
            component: Some(Component::Instantiation),
        },
    )
}

pub fn phase_a(
    backend: &dyn GeneratorBackend,
    vuln: &VulnRecord,
    budget: u32,
) -> Result<PhaseAOutcome, AgentError> {
    let info = vulnerability_info_text(vuln);

    let a1_prompt = fill(prompts::A1_EXTRACTOR, &[("vulnerability_info", &info)]);
    let a1_out = backend
        .complete(AgentRole::A1Extract, &a1_prompt)
        .map_err(|e| AgentError::Backend { attempt: 0, source: e })?;
    let mut trigger = parse_agent_trigger(&a1_out);
    // the refiner context needs some trigger source even when parsing failed
    let mut trigger_source = match &trigger {
        Ok(tf) => crate::trigger::render_trigger(tf),
        Err(_) => extract_block(&a1_out, "trig").unwrap_or_else(|| a1_out.clone()),
    };

    let a2_prompt = fill(
        prompts::A2_TESTCASE,
        &[("vulnerability_info", &info), ("trigger_source", &trigger_source)],
    );
    let a2_out = backend
        .complete(AgentRole::A2Testcase, &a2_prompt)
        .map_err(|e| AgentError::Backend { attempt: 0, source: e })?;
    let testcase = extract_block(&a2_out, "trigtest")
        .ok_or_else(|| AgentError::TestcaseParse("no ```trigtest fenced block".to_string()))
        .and_then(|b| {
            crate::validation::parse_testcase(&b).map_err(|e| AgentError::TestcaseParse(e.to_string()))
        })?;

    let mut transcript = Vec::new();
    let mut refinements_used = 0u32;
    let mut result = match &trigger {
        Ok(tf) => (0, run_testcase(tf, &testcase)),
        Err(e) => parse_failure(0, e),
    };
    transcript.push(result.clone());

    while !result.1.passed && refinements_used < budget {
        let a3_prompt = fill(
            prompts::A3_REFINER,
            &[("trigger_source", &trigger_source), ("error_message", &result.1.message)],
        );
        let a3_out = backend
            .complete(AgentRole::A3TriggerRefine, &a3_prompt)
            .map_err(|e| AgentError::Backend { attempt: refinements_used + 1, source: e })?;
        refinements_used += 1;
        trigger = parse_agent_trigger(&a3_out);
        trigger_source = match &trigger {
            Ok(tf) => crate::trigger::render_trigger(tf),
            Err(_) => extract_block(&a3_out, "trig").unwrap_or_else(|| a3_out.clone()),
        };
        result = match &trigger {
            Ok(tf) => (refinements_used, run_testcase(tf, &testcase)),
            Err(e) => parse_failure(refinements_used, e),
        };
        transcript.push(result.clone());
    }

    let passed = result.1.passed;
    Ok(PhaseAOutcome {
        status: if passed { PhaseAStatus::Validated } else { PhaseAStatus::Failed },
        trigger: trigger.ok().filter(|_| passed),
        testcase: Some(testcase),
        refinements_used,
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::mock::{MockBackend, ReplayStep};
    use crate::vuln::{InfoCategory, Reference};

    const GOOD_TRIG: &str = "```trig\ntrigger cve\nparam file\nparam ext\nmode regex_bypass:\n  request:\n    method GET\n    path /{file}%20%00.{ext}\n```";
    const BUGGY_TRIG: &str = "```trig\ntrigger cve\nparam file\nparam ext\nmode regex_bypass:\n  request:\n    method GET\n    path /{file}%00.{ext}\n```";
    const TESTCASE: &str = "```trigtest\ncase:\nstep mode=regex_bypass file=file ext=php\nexpect method GET\nexpect path /file%20%00.php\n```";

    fn vuln() -> VulnRecord {
        VulnRecord {
            id: "CVE-TEST".into(),
            description: "space bypass".into(),
            references: vec![Reference {
                source_label: "adv".into(),
                content: "a space then a null byte bypasses the suffix check".into(),
                declared_form: None,
            }],
            info_category: InfoCategory::Nl,
        }
    }

    fn step(role: AgentRole, respond: &str) -> ReplayStep {
        ReplayStep {
            role,
            attempt: 0,
            respond: respond.into(),
            expect_context_contains: vec![],
            repeat: false,
            task: None,
        }
    }

    #[test]
    fn immediate_pass_uses_no_refinements() {
        let backend = MockBackend::new(vec![
            step(AgentRole::A1Extract, GOOD_TRIG),
            step(AgentRole::A2Testcase, TESTCASE),
        ]);
        let out = phase_a(&backend, &vuln(), 3).unwrap();
        assert_eq!(out.status, PhaseAStatus::Validated);
        assert_eq!(out.refinements_used, 0);
        assert_eq!(out.transcript.len(), 1);
        assert!(out.trigger.is_some());
    }

    #[test]
    fn one_refinement_fixes_buggy_trigger_and_sees_message() {
        let mut refine = step(AgentRole::A3TriggerRefine, GOOD_TRIG);
        refine.expect_context_contains = vec![
            "URL Path Mismatch: Expected '/file%20%00.php', got '/file%00.php'".into(),
        ];
        let backend = MockBackend::new(vec![
            step(AgentRole::A1Extract, BUGGY_TRIG),
            step(AgentRole::A2Testcase, TESTCASE),
            refine,
        ]);
        let out = phase_a(&backend, &vuln(), 3).unwrap();
        assert_eq!(out.status, PhaseAStatus::Validated);
        assert_eq!(out.refinements_used, 1);
        assert_eq!(out.transcript.len(), 2);
    }

    #[test]
    fn budget_exhaustion_reports_failed() {
        let mut buggy = step(AgentRole::A3TriggerRefine, BUGGY_TRIG);
        buggy.repeat = true;
        let backend = MockBackend::new(vec![
            step(AgentRole::A1Extract, BUGGY_TRIG),
            step(AgentRole::A2Testcase, TESTCASE),
            buggy,
        ]);
        let out = phase_a(&backend, &vuln(), 3).unwrap();
        assert_eq!(out.status, PhaseAStatus::Failed);
        assert_eq!(out.refinements_used, 3);
        assert_eq!(out.transcript.len(), 4);
        assert_eq!(backend.calls_for(AgentRole::A3TriggerRefine), 3);
    }

    #[test]
    fn unparseable_output_counts_as_instantiation_failure() {
        let backend = MockBackend::new(vec![
            step(AgentRole::A1Extract, "no fence at all"),
            step(AgentRole::A2Testcase, TESTCASE),
            step(AgentRole::A3TriggerRefine, GOOD_TRIG),
        ]);
        let out = phase_a(&backend, &vuln(), 3).unwrap();
        assert_eq!(out.status, PhaseAStatus::Validated);
        assert_eq!(out.refinements_used, 1);
        assert_eq!(out.transcript[0].1.component, Some(Component::Instantiation));
    }

    #[test]
    fn zero_budget_never_calls_refiner() {
        let backend = MockBackend::new(vec![
            step(AgentRole::A1Extract, BUGGY_TRIG),
            step(AgentRole::A2Testcase, TESTCASE),
        ]);
        let out = phase_a(&backend, &vuln(), 0).unwrap();
        assert_eq!(out.status, PhaseAStatus::Failed);
        assert_eq!(out.refinements_used, 0);
        assert_eq!(backend.calls_for(AgentRole::A3TriggerRefine), 0);
    }
}
