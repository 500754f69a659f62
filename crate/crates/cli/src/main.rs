//! `exploitpipe`: run the pipeline, benchmark the fixture suite, validate
//! trigger functions, serve fixtures, and re-render reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use exploitpipe_core::agents::api::{ApiBackend, ApiConfig};
use exploitpipe_core::agents::mock::{MockBackend, ReplayScript};
use exploitpipe_core::agents::{AblationConfig, Budgets, GeneratorBackend};
use exploitpipe_core::bench::{
    build_report, run_bench, write_report, BenchConfig, BenchReport, ReportFormat,
};
use exploitpipe_core::executor::ExecLimits;
use exploitpipe_core::fixtures::start_fixture;
use exploitpipe_core::vuln::{TargetBinding, FIXTURE_NAMES};
use exploitpipe_core::{assets, load_manifest};

#[derive(Parser)]
#[command(name = "exploitpipe", version, about = "Two-phase exploit-generation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Ablation {
    #[value(name = "no-phase-a")]
    NoPhaseA,
    #[value(name = "no-trigger-validation")]
    NoTriggerValidation,
    #[value(name = "no-exploit-refine")]
    NoExploitRefine,
}

impl Ablation {
    fn config(flags: &[Ablation]) -> AblationConfig {
        AblationConfig {
            skip_phase_a: flags.contains(&Ablation::NoPhaseA),
            skip_trigger_validation: flags.contains(&Ablation::NoTriggerValidation),
            skip_exploit_refine: flags.contains(&Ablation::NoExploitRefine),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

impl Format {
    fn report_format(self) -> ReportFormat {
        match self {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Text => ReportFormat::Text,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Text => "txt",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline for one task of a manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// Task id within the manifest.
        #[arg(long)]
        task: String,
        /// `mock:<replay.json>` or `api:<config.json>`. Defaults to the
        /// bundled replay matching the ablation flags.
        #[arg(long)]
        backend: Option<String>,
        /// Refinement budget for both loops.
        #[arg(long, default_value_t = 3)]
        budget: u32,
        #[arg(long, value_enum)]
        ablation: Vec<Ablation>,
    },
    /// Run the whole manifest and write a report.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        repeats: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long, default_value_t = 1)]
        workers: u32,
        /// `mock:<replay.json>`; defaults to the bundled replay matching the
        /// ablation flags.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long, value_enum)]
        ablation: Vec<Ablation>,
    },
    /// Validate a trigger function against a test case.
    ValidateTrigger {
        #[arg(long)]
        trig: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Start all fixtures on consecutive ports and block.
    ServeFixtures {
        #[arg(long)]
        port_base: u16,
    },
    /// Re-render a previously written report.
    Report {
        #[arg(long = "in")]
        in_dir: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn load_replay(spec: Option<&str>, ablation: &AblationConfig) -> Result<ReplayScript, String> {
    match spec {
        None => ReplayScript::from_str(assets::replay_for(ablation)),
        Some(s) => match s.split_once(':') {
            Some(("mock", path)) => ReplayScript::from_file(Path::new(path)),
            _ => Err(format!("expected 'mock:<replay.json>', got '{s}'")),
        },
    }
}

fn make_backend(
    spec: Option<&str>,
    ablation: &AblationConfig,
) -> Result<Box<dyn GeneratorBackend>, String> {
    match spec {
        None => Ok(Box::new(MockBackend::from_script(&ReplayScript::from_str(
            assets::replay_for(ablation),
        )?))),
        Some(s) => match s.split_once(':') {
            Some(("mock", path)) => Ok(Box::new(MockBackend::from_file(Path::new(path))?)),
            Some(("api", path)) => {
                Ok(Box::new(ApiBackend::new(ApiConfig::from_file(Path::new(path))?)))
            }
            _ => Err(format!("expected 'mock:<file>' or 'api:<file>', got '{s}'")),
        },
    }
}

fn cmd_run(
    manifest: &Path,
    task_id: &str,
    backend_spec: Option<&str>,
    budget: u32,
    ablation: AblationConfig,
) -> Result<(), String> {
    let taskset = load_manifest(manifest).map_err(|e| e.to_string())?;
    let task = taskset
        .tasks
        .iter()
        .find(|t| t.vuln.id == task_id)
        .ok_or_else(|| format!("no task with id '{task_id}' in {}", manifest.display()))?;
    let backend = make_backend(backend_spec, &ablation)?;
    let budgets = Budgets { phase_a: budget, phase_b: budget };
    let limits = ExecLimits::default();

    let result = match &task.target {
        TargetBinding::Fixture { fixture } => {
            let handle = start_fixture(fixture, 0).map_err(|e| e.to_string())?;
            let r = exploitpipe_core::agents::run_pipeline(
                backend.as_ref(),
                task,
                &handle.base_url(),
                ablation,
                budgets,
                &limits,
            )
            .map_err(|e| e.to_string())?;
            handle.stop();
            r
        }
        TargetBinding::Url { url } => exploitpipe_core::agents::run_pipeline(
            backend.as_ref(),
            task,
            url,
            ablation,
            budgets,
            &limits,
        )
        .map_err(|e| e.to_string())?,
    };

    println!("{}", serde_json::to_string_pretty(&result).map_err(|e| e.to_string())?);
    let achieved = result.objectives.iter().filter(|o| o.attack_result).count();
    eprintln!("{achieved}/{} objectives achieved", result.objectives.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    manifest: &Path,
    repeats: u32,
    seed: u64,
    out: &Path,
    format: Format,
    workers: u32,
    backend_spec: Option<&str>,
    ablation: AblationConfig,
) -> Result<(), String> {
    let taskset = load_manifest(manifest).map_err(|e| e.to_string())?;
    let script = load_replay(backend_spec, &ablation)?;
    let cfg = BenchConfig {
        ablation,
        budgets: Budgets::default(),
        repeats,
        seed,
        workers,
        limits: ExecLimits::default(),
    };
    let result = run_bench(&taskset, &script, &cfg).map_err(|e| e.to_string())?;
    let report = build_report(&taskset, &result, &cfg);

    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let canonical = out.join("report.json");
    std::fs::write(&canonical, write_report(&report, ReportFormat::Json))
        .map_err(|e| e.to_string())?;
    if format != Format::Json {
        let path = out.join(format!("report.{}", format.extension()));
        std::fs::write(&path, write_report(&report, format.report_format()))
            .map_err(|e| e.to_string())?;
    }
    print!("{}", write_report(&report, ReportFormat::Text));
    eprintln!("report written to {}", canonical.display());
    Ok(())
}

fn cmd_validate_trigger(trig: &Path, test: &Path) -> Result<bool, String> {
    let trig_src =
        std::fs::read_to_string(trig).map_err(|e| format!("{}: {e}", trig.display()))?;
    let test_src =
        std::fs::read_to_string(test).map_err(|e| format!("{}: {e}", test.display()))?;
    let tf = exploitpipe_core::parse_trigger(&trig_src).map_err(|e| e.to_string())?;
    let tc = exploitpipe_core::parse_testcase(&test_src).map_err(|e| e.to_string())?;
    let result = exploitpipe_core::run_testcase(&tf, &tc);
    println!("{}", result.message);
    Ok(result.passed)
}

fn cmd_serve_fixtures(port_base: u16) -> Result<(), String> {
    let mut handles = Vec::new();
    for (i, name) in FIXTURE_NAMES.iter().enumerate() {
        let port = port_base + i as u16;
        let handle = start_fixture(name, port).map_err(|e| e.to_string())?;
        println!("{name} listening on {}", handle.base_url());
        handles.push(handle);
    }
    println!("serving; press Ctrl-C to stop");
    loop {
        std::thread::park();
    }
}

fn cmd_report(in_dir: &Path, format: Format) -> Result<(), String> {
    let path = in_dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let report: BenchReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    print!("{}", write_report(&report, format.report_format()));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { manifest, task, backend, budget, ablation } => cmd_run(
            &manifest,
            &task,
            backend.as_deref(),
            budget,
            Ablation::config(&ablation),
        )
        .map(|()| true),
        Command::Bench {
            manifest,
            repeats,
            seed,
            out,
            format,
            workers,
            backend,
            ablation,
        } => cmd_bench(
            &manifest,
            repeats,
            seed,
            &out,
            format,
            workers,
            backend.as_deref(),
            Ablation::config(&ablation),
        )
        .map(|()| true),
        Command::ValidateTrigger { trig, test } => cmd_validate_trigger(&trig, &test),
        Command::ServeFixtures { port_base } => cmd_serve_fixtures(port_base).map(|()| true),
        Command::Report { in_dir, format } => cmd_report(&in_dir, format).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
