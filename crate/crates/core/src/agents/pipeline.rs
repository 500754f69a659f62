//! End-to-end orchestration of one task: Phase A, then Phase B per objective,
//! with ablation switches that disable individual stages.

use serde::{Deserialize, Serialize};

use crate::executor::ExecLimits;
use crate::vuln::Task;

use super::phase_a::{self, vulnerability_info_text, PhaseAOutcome, PhaseAStatus};
use super::phase_b::{phase_b, ObjectiveOutcome};
use super::{extract_block, AgentError, AgentRole, GeneratorBackend, Usage};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Skip Phase A entirely; Phase B works from raw vulnerability info.
    #[serde(default)]
    pub skip_phase_a: bool,
    /// Keep trigger extraction but drop test-case validation and refinement.
    #[serde(default)]
    pub skip_trigger_validation: bool,
    /// Drop exploit judging feedback loops: no refinement budget in Phase B.
    #[serde(default)]
    pub skip_exploit_refine: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    pub phase_a: u32,
    pub phase_b: u32,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { phase_a: phase_a::DEFAULT_BUDGET, phase_b: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRunResult {
    pub task_id: String,
    pub phase_a: Option<PhaseAOutcome>,
    pub objectives: Vec<ObjectiveOutcome>,
    pub usage: Usage,
    pub wall_ms: u64,
}

fn usage_delta(before: &Usage, after: &Usage) -> Usage {
    Usage {
        calls: after.calls - before.calls,
        prompt_bytes: after.prompt_bytes - before.prompt_bytes,
        response_bytes: after.response_bytes - before.response_bytes,
    }
}

/// A1 extraction without validation (the no-validation ablation). The parsed
/// trigger is trusted as-is; a parse failure yields a failed outcome.
fn extract_unvalidated(
    backend: &dyn GeneratorBackend,
    task: &Task,
) -> Result<PhaseAOutcome, AgentError> {
    let info = vulnerability_info_text(&task.vuln);
    let prompt = super::prompts::fill(super::prompts::A1_EXTRACTOR, &[("vulnerability_info", &info)]);
    let out = backend
        .complete(AgentRole::A1Extract, &prompt)
        .map_err(|e| AgentError::Backend { attempt: 0, source: e })?;
    let trigger = extract_block(&out, "trig").and_then(|b| crate::trigger::parse_trigger(&b).ok());
    Ok(PhaseAOutcome {
        status: if trigger.is_some() { PhaseAStatus::Validated } else { PhaseAStatus::Failed },
        trigger,
        testcase: None,
        refinements_used: 0,
        transcript: vec![],
    })
}

/// Run one task end to end against `target_url`. Phase A failure is not
/// fatal: Phase B then runs from raw vulnerability information, which is also
/// the behavior of the no-Phase-A ablation.
pub fn run_pipeline(
    backend: &dyn GeneratorBackend,
    task: &Task,
    target_url: &str,
    ablation: AblationConfig,
    budgets: Budgets,
    limits: &ExecLimits,
) -> Result<TaskRunResult, AgentError> {
    let start = std::time::Instant::now();
    let usage_before = backend.usage();

    let phase_a_outcome = if ablation.skip_phase_a {
        None
    } else if ablation.skip_trigger_validation {
        Some(extract_unvalidated(backend, task)?)
    } else {
        Some(phase_a::phase_a(backend, &task.vuln, budgets.phase_a)?)
    };

    let trigger = phase_a_outcome.as_ref().and_then(|o| o.trigger.as_ref());
    let phase_b_budget = if ablation.skip_exploit_refine { 0 } else { budgets.phase_b };
    let info = vulnerability_info_text(&task.vuln);
    let objectives = phase_b(
        backend,
        trigger,
        &info,
        target_url,
        &task.objectives,
        phase_b_budget,
        limits,
    )?;

    Ok(TaskRunResult {
        task_id: task.vuln.id.clone(),
        phase_a: phase_a_outcome,
        objectives,
        usage: usage_delta(&usage_before, &backend.usage()),
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::mock::{MockBackend, ReplayStep};
    use crate::fixtures::start_fixture;
    use crate::vuln::{
        AttackObjective, InfoCategory, ObjectiveCategory, Reference, SuccessPredicate,
        TargetBinding, VulnRecord,
    };

    const TRIG: &str = "```trig\ntrigger t\nparam file default=etc/passwd\nmode step:\n  request:\n    method GET\n    path /files?name=%2e%2e%2f{file}\n```";
    const TESTCASE: &str = "```trigtest\ncase:\nstep mode=step file=etc/passwd\nexpect method GET\nexpect path /files?name=%2e%2e%2fetc/passwd\n```";
    const EXPLOIT: &str = "```exploit\nobjective read_passwd\nmode step\ntrigger <<T\ntrigger t\nparam file default=etc/passwd\nmode step:\n  request:\n    method GET\n    path /files?name=%2e%2e%2f{file}\nT\n```";

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

    fn task() -> Task {
        Task {
            vuln: VulnRecord {
                id: "CVE-TEST".into(),
                description: "single-step traversal".into(),
                references: vec![Reference {
                    source_label: "adv".into(),
                    content: "one encoded dot-dot step reaches files above the web root".into(),
                    declared_form: None,
                }],
                info_category: InfoCategory::Nl,
            },
            target: TargetBinding::Fixture { fixture: "file_read".into() },
            objectives: vec![AttackObjective {
                objective_id: "read_passwd".into(),
                category: ObjectiveCategory::Afw,
                text: "read /etc/passwd".into(),
                success: SuccessPredicate::BodyContains { needle: "root:x:0:0:".into() },
            }],
        }
    }

    #[test]
    fn full_pipeline_succeeds_against_fixture() {
        let fixture = start_fixture("file_read", 0).unwrap();
        let backend = MockBackend::new(vec![
            step(AgentRole::A1Extract, TRIG),
            step(AgentRole::A2Testcase, TESTCASE),
            step(AgentRole::A4ExploitGen, EXPLOIT),
        ]);
        let result = run_pipeline(
            &backend,
            &task(),
            &fixture.base_url(),
            AblationConfig::default(),
            Budgets::default(),
            &ExecLimits::default(),
        )
        .unwrap();
        assert!(result.phase_a.as_ref().unwrap().trigger.is_some());
        assert!(result.objectives[0].attack_result);
        assert_eq!(result.usage.calls, 3);
    }

    #[test]
    fn skip_phase_a_makes_no_a1_a2_a3_calls() {
        let fixture = start_fixture("file_read", 0).unwrap();
        let backend = MockBackend::new(vec![step(AgentRole::A4ExploitGen, EXPLOIT)]);
        let result = run_pipeline(
            &backend,
            &task(),
            &fixture.base_url(),
            AblationConfig { skip_phase_a: true, ..Default::default() },
            Budgets::default(),
            &ExecLimits::default(),
        )
        .unwrap();
        assert!(result.phase_a.is_none());
        assert!(result.objectives[0].attack_result);
        assert_eq!(backend.calls_for(AgentRole::A1Extract), 0);
        assert_eq!(backend.calls_for(AgentRole::A2Testcase), 0);
    }

    #[test]
    fn skip_validation_trusts_a1_output() {
        let fixture = start_fixture("file_read", 0).unwrap();
        let backend = MockBackend::new(vec![
            step(AgentRole::A1Extract, TRIG),
            step(AgentRole::A4ExploitGen, EXPLOIT),
        ]);
        let result = run_pipeline(
            &backend,
            &task(),
            &fixture.base_url(),
            AblationConfig { skip_trigger_validation: true, ..Default::default() },
            Budgets::default(),
            &ExecLimits::default(),
        )
        .unwrap();
        let pa = result.phase_a.as_ref().unwrap();
        assert!(pa.testcase.is_none());
        assert!(pa.trigger.is_some());
        assert_eq!(backend.calls_for(AgentRole::A2Testcase), 0);
        assert_eq!(backend.calls_for(AgentRole::A3TriggerRefine), 0);
    }

    #[test]
    fn skip_refine_never_calls_a6() {
        let fixture = start_fixture("file_read", 0).unwrap();
        // wrong path: the fixture only serves the encoded traversal
        let backend = MockBackend::new(vec![step(
            AgentRole::A4ExploitGen,
            &EXPLOIT.replace("path /files?name=%2e%2e%2f{file}", "path /files?name={file}"),
        )]);
        let result = run_pipeline(
            &backend,
            &task(),
            &fixture.base_url(),
            AblationConfig { skip_phase_a: true, skip_exploit_refine: true, ..Default::default() },
            Budgets::default(),
            &ExecLimits::default(),
        )
        .unwrap();
        assert!(!result.objectives[0].attack_result);
        assert_eq!(result.objectives[0].refinements_used, 0);
        assert_eq!(backend.calls_for(AgentRole::A6ExploitRefine), 0);
    }
}
