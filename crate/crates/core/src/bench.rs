//! Benchmark harness and reporting.
//!
//! Runs a task set against its fixtures with a scripted replay backend,
//! aggregates attack success rate (ASR) as exact rationals, and emits
//! deterministic reports. ASR over a selection of objectives is the number
//! of successful objectives divided by the number of objectives selected.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::mock::{MockBackend, ReplayScript};
use crate::agents::pipeline::{run_pipeline, AblationConfig, Budgets, TaskRunResult};
use crate::agents::{AgentError, Usage};
use crate::executor::ExecLimits;
use crate::fixtures::{start_fixture, FixtureError};
use crate::vuln::{InfoCategory, ObjectiveCategory, TargetBinding, TaskSet};

pub type Asr = Ratio<u64>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("empty selection: ASR is undefined over zero objectives")]
    EmptySelection,
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Flat per-objective outcome row used for all aggregation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveRecord {
    pub task_id: String,
    pub objective_id: String,
    pub category: ObjectiveCategory,
    pub info_category: InfoCategory,
    pub attack_result: bool,
    pub refinements_used: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub info_category: InfoCategory,
    /// None when Phase A was skipped by ablation.
    pub phase_a_validated: Option<bool>,
    pub phase_a_refinements: u32,
    pub usage: Usage,
    pub wall_ms: u64,
    pub objectives: Vec<ObjectiveRecord>,
}

/// Exact ASR over a selection. Errors on an empty selection rather than
/// inventing a 0/0 value.
pub fn asr<'a, I>(records: I) -> Result<Asr, BenchError>
where
    I: IntoIterator<Item = &'a ObjectiveRecord>,
{
    let mut successes = 0u64;
    let mut total = 0u64;
    for r in records {
        total += 1;
        successes += u64::from(r.attack_result);
    }
    if total == 0 {
        return Err(BenchError::EmptySelection);
    }
    Ok(Ratio::new(successes, total))
}

/// Render a ratio with exactly four decimal places, round half up.
pub fn format_asr(r: &Asr) -> String {
    let num = *r.numer() as u128;
    let den = *r.denom() as u128;
    let scaled = (num * 10_000 * 2 + den) / (2 * den);
    format!("{}.{:04}", scaled / 10_000, scaled % 10_000)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationStats {
    /// Mean trigger refinements per validated task, as (sum, count).
    pub phase_a: Option<(u64, u64)>,
    /// Mean exploit refinements per successful objective, as (sum, count).
    pub phase_b: Option<(u64, u64)>,
    /// Mean total refinements (trigger + exploit) per successful objective.
    pub entire: Option<(u64, u64)>,
}

impl IterationStats {
    fn ratio(pair: Option<(u64, u64)>) -> Option<Asr> {
        pair.and_then(|(sum, count)| (count > 0).then(|| Ratio::new(sum, count)))
    }

    pub fn phase_a_mean(&self) -> Option<Asr> {
        Self::ratio(self.phase_a)
    }

    pub fn phase_b_mean(&self) -> Option<Asr> {
        Self::ratio(self.phase_b)
    }

    pub fn entire_mean(&self) -> Option<Asr> {
        Self::ratio(self.entire)
    }
}

/// Iteration counts over successful work only: failed tasks/objectives spend
/// their full budget by construction and would swamp the mean.
pub fn iteration_stats(tasks: &[TaskRecord]) -> IterationStats {
    let mut a_sum = 0u64;
    let mut a_count = 0u64;
    for t in tasks {
        if t.phase_a_validated == Some(true) {
            a_sum += u64::from(t.phase_a_refinements);
            a_count += 1;
        }
    }
    let mut b_sum = 0u64;
    let mut b_count = 0u64;
    for o in tasks.iter().flat_map(|t| &t.objectives) {
        if o.attack_result {
            b_sum += u64::from(o.refinements_used);
            b_count += 1;
        }
    }
    // entire: every refinement spent anywhere, amortized over successes
    let entire_sum = a_sum + b_sum;
    IterationStats {
        phase_a: (a_count > 0).then_some((a_sum, a_count)),
        phase_b: (b_count > 0).then_some((b_sum, b_count)),
        entire: (b_count > 0).then_some((entire_sum, b_count)),
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub ablation: AblationConfig,
    pub budgets: Budgets,
    pub repeats: u32,
    /// Recorded in the report for provenance. The bundled backends and
    /// fixtures are deterministic, so the seed does not alter results.
    pub seed: u64,
    /// Tasks per repeat run on up to this many threads (1 = sequential).
    pub workers: u32,
    pub limits: ExecLimits,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ablation: AblationConfig::default(),
            budgets: Budgets::default(),
            repeats: 1,
            seed: 0,
            workers: 1,
            limits: ExecLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    /// One entry per repeat, each a full suite run in task order.
    pub runs: Vec<Vec<TaskRunResult>>,
}

impl BenchResult {
    /// True when all repeats are identical after volatile fields (wall-clock
    /// times, timestamps, digests over port-dependent bytes) are removed.
    /// Raw wire traces are excluded too: every fixture listens on a fresh
    /// ephemeral port per run, so Host headers (and the echo fixture's body,
    /// which reflects them) differ between repeats by construction.
    pub fn deterministic(&self) -> bool {
        let mut normalized = self.runs.iter().map(|run| {
            let mut v = serde_json::to_value(run).expect("run serialization");
            strip_volatile(&mut v);
            strip_traces(&mut v);
            v
        });
        let Some(first) = normalized.next() else { return true };
        normalized.all(|v| v == first)
    }
}

/// Remove fields that legitimately differ between repeats (timing, the
/// report timestamp, and request digests, which hash the Host header and so
/// depend on the ephemeral fixture port).
pub fn strip_volatile(value: &mut Value) {
    const VOLATILE: [&str; 4] = ["generated_at", "wall_ms", "elapsed_ms", "sent_digest"];
    match value {
        Value::Object(map) => {
            for key in VOLATILE {
                map.remove(key);
            }
            for v in map.values_mut() {
                strip_volatile(v);
            }
        }
        Value::Array(items) => {
            for v in items {
                strip_volatile(v);
            }
        }
        _ => {}
    }
}

fn strip_traces(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("traces");
            for v in map.values_mut() {
                strip_traces(v);
            }
        }
        Value::Array(items) => {
            for v in items {
                strip_traces(v);
            }
        }
        _ => {}
    }
}

/// Run the whole task set `repeats` times. Fixture targets get a fresh
/// fixture per task per run (ephemeral port, empty state); each task sees
/// only its own replay steps plus untagged ones.
pub fn run_bench(
    taskset: &TaskSet,
    script: &ReplayScript,
    cfg: &BenchConfig,
) -> Result<BenchResult, BenchError> {
    let mut runs = Vec::with_capacity(cfg.repeats.max(1) as usize);
    for _ in 0..cfg.repeats.max(1) {
        runs.push(run_suite_once(taskset, script, cfg)?);
    }
    Ok(BenchResult { runs })
}

fn run_one_task(
    task: &crate::vuln::Task,
    script: &ReplayScript,
    cfg: &BenchConfig,
) -> Result<TaskRunResult, BenchError> {
    let backend = MockBackend::new(script.steps_for_task(&task.vuln.id));
    match &task.target {
        TargetBinding::Fixture { fixture } => {
            let handle = start_fixture(fixture, 0)?;
            let r = run_pipeline(
                &backend,
                task,
                &handle.base_url(),
                cfg.ablation,
                cfg.budgets,
                &cfg.limits,
            )?;
            handle.stop();
            Ok(r)
        }
        TargetBinding::Url { url } => {
            Ok(run_pipeline(&backend, task, url, cfg.ablation, cfg.budgets, &cfg.limits)?)
        }
    }
}

fn run_suite_once(
    taskset: &TaskSet,
    script: &ReplayScript,
    cfg: &BenchConfig,
) -> Result<Vec<TaskRunResult>, BenchError> {
    if cfg.workers <= 1 || taskset.tasks.len() <= 1 {
        return taskset
            .tasks
            .iter()
            .map(|t| run_one_task(t, script, cfg))
            .collect();
    }
    // tasks are independent (own fixture, own backend): fan out, keep order
    let slots: Vec<std::sync::Mutex<Option<Result<TaskRunResult, BenchError>>>> =
        (0..taskset.tasks.len()).map(|_| std::sync::Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        let slots = &slots;
        let next = &next;
        for _ in 0..cfg.workers.min(taskset.tasks.len() as u32) {
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some(task) = taskset.tasks.get(idx) else { break };
                let result = run_one_task(task, script, cfg);
                *slots[idx].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

/// Join pipeline results back to their manifest rows.
pub fn summarize(taskset: &TaskSet, results: &[TaskRunResult]) -> Vec<TaskRecord> {
    taskset
        .tasks
        .iter()
        .zip(results)
        .map(|(task, result)| {
            let objectives = result
                .objectives
                .iter()
                .map(|o| ObjectiveRecord {
                    task_id: task.vuln.id.clone(),
                    objective_id: o.objective_id.clone(),
                    category: task
                        .objectives
                        .iter()
                        .find(|spec| spec.objective_id == o.objective_id)
                        .map(|spec| spec.category)
                        .unwrap_or(ObjectiveCategory::Misc),
                    info_category: task.vuln.info_category,
                    attack_result: o.attack_result,
                    refinements_used: o.refinements_used,
                })
                .collect();
            TaskRecord {
                task_id: task.vuln.id.clone(),
                info_category: task.vuln.info_category,
                phase_a_validated: result
                    .phase_a
                    .as_ref()
                    .map(|a| a.status == crate::agents::PhaseAStatus::Validated),
                phase_a_refinements: result
                    .phase_a
                    .as_ref()
                    .map(|a| a.refinements_used)
                    .unwrap_or(0),
                usage: result.usage,
                wall_ms: result.wall_ms,
                objectives,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsrEntry {
    pub label: String,
    pub successes: u64,
    pub total: u64,
    pub asr: String,
}

fn entry<'a, I>(label: &str, records: I) -> Option<AsrEntry>
where
    I: IntoIterator<Item = &'a ObjectiveRecord>,
{
    // count directly: the reduced Ratio would collapse e.g. 5/5 to 1/1
    let mut successes = 0u64;
    let mut total = 0u64;
    for r in records {
        total += 1;
        successes += u64::from(r.attack_result);
    }
    (total > 0).then(|| AsrEntry {
        label: label.to_string(),
        successes,
        total,
        asr: format_asr(&Ratio::new(successes, total)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationStatsReport {
    pub phase_a: Option<String>,
    pub phase_b: Option<String>,
    pub entire: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub generated_at: String,
    pub ablation: AblationConfig,
    pub budgets: Budgets,
    pub repeats: u32,
    pub seed: u64,
    pub deterministic: bool,
    pub by_objective_category: Vec<AsrEntry>,
    pub by_info_category: Vec<AsrEntry>,
    pub overall: Option<AsrEntry>,
    pub iteration_stats: IterationStatsReport,
    pub usage: Usage,
    pub tasks: Vec<TaskRecord>,
}

pub fn build_report(taskset: &TaskSet, result: &BenchResult, cfg: &BenchConfig) -> BenchReport {
    let tasks = summarize(taskset, result.runs.first().map(Vec::as_slice).unwrap_or(&[]));
    let all: Vec<&ObjectiveRecord> = tasks.iter().flat_map(|t| &t.objectives).collect();

    let by_objective_category = ObjectiveCategory::ALL
        .iter()
        .filter_map(|cat| {
            let sel: Vec<&ObjectiveRecord> =
                all.iter().copied().filter(|o| o.category == *cat).collect();
            entry(cat.label(), sel)
        })
        .collect();
    let info_cats: Vec<InfoCategory> = {
        let mut cats: Vec<InfoCategory> = all.iter().map(|o| o.info_category).collect();
        cats.sort();
        cats.dedup();
        cats
    };
    let by_info_category = info_cats
        .iter()
        .filter_map(|cat| {
            let sel: Vec<&ObjectiveRecord> =
                all.iter().copied().filter(|o| o.info_category == *cat).collect();
            entry(cat.label(), sel)
        })
        .collect();
    let overall = entry("overall", all.iter().copied());

    let stats = iteration_stats(&tasks);
    let mut usage = Usage::default();
    for t in &tasks {
        usage.add(&t.usage);
    }
    BenchReport {
        generated_at: chrono::Utc::now().to_rfc3339(),
        ablation: cfg.ablation,
        budgets: cfg.budgets,
        repeats: cfg.repeats,
        seed: cfg.seed,
        deterministic: result.deterministic(),
        by_objective_category,
        by_info_category,
        overall,
        iteration_stats: IterationStatsReport {
            phase_a: stats.phase_a_mean().as_ref().map(format_asr),
            phase_b: stats.phase_b_mean().as_ref().map(format_asr),
            entire: stats.entire_mean().as_ref().map(format_asr),
        },
        usage,
        tasks,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            "text" => Some(ReportFormat::Text),
            _ => None,
        }
    }
}

/// Serialize a report. CSV lists one row per selection, overall last; text is
/// a human summary.
pub fn write_report(report: &BenchReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serialization");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut out = String::from("section,label,successes,total,asr\n");
            for e in &report.by_objective_category {
                out.push_str(&format!(
                    "objective_category,{},{},{},{}\n",
                    e.label, e.successes, e.total, e.asr
                ));
            }
            for e in &report.by_info_category {
                out.push_str(&format!(
                    "info_category,{},{},{},{}\n",
                    e.label, e.successes, e.total, e.asr
                ));
            }
            if let Some(e) = &report.overall {
                out.push_str(&format!(
                    "overall,{},{},{},{}\n",
                    e.label, e.successes, e.total, e.asr
                ));
            }
            out
        }
        ReportFormat::Text => {
            let mut out = String::new();
            out.push_str(&format!("generated at {}\n", report.generated_at));
            out.push_str(&format!(
                "repeats: {}  deterministic: {}\n",
                report.repeats, report.deterministic
            ));
            match &report.overall {
                Some(e) => out.push_str(&format!(
                    "overall ASR: {} ({}/{})\n",
                    e.asr, e.successes, e.total
                )),
                None => out.push_str("overall ASR: undefined (no objectives)\n"),
            }
            out.push_str("by objective category:\n");
            for e in &report.by_objective_category {
                out.push_str(&format!(
                    "  {:<8} {} ({}/{})\n",
                    e.label, e.asr, e.successes, e.total
                ));
            }
            out.push_str("by information category:\n");
            for e in &report.by_info_category {
                out.push_str(&format!(
                    "  {:<10} {} ({}/{})\n",
                    e.label, e.asr, e.successes, e.total
                ));
            }
            out.push_str("mean refinement iterations (successful only):\n");
            let fmt = |v: &Option<String>| v.clone().unwrap_or_else(|| "n/a".to_string());
            out.push_str(&format!(
                "  phase A: {}  phase B: {}  entire: {}\n",
                fmt(&report.iteration_stats.phase_a),
                fmt(&report.iteration_stats.phase_b),
                fmt(&report.iteration_stats.entire)
            ));
            out.push_str(&format!(
                "backend usage: {} calls, {} prompt bytes, {} response bytes\n",
                report.usage.calls, report.usage.prompt_bytes, report.usage.response_bytes
            ));
            out
        }
    }
}
