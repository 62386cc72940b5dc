use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rdloop_core::backends::synthetic::write_synthetic_task;
use rdloop_core::eval::EvalError;
use rdloop_core::orchestrator::report::build_report;
use rdloop_core::orchestrator::trace::read_trace;
use rdloop_core::orchestrator::{resume, run, validate_task, OrchestratorError, RunConfig, RunOptions, RunOutcome};

#[derive(Parser)]
#[command(name = "rdloop", version, about = "Budgeted research and development loop for ML tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a run on a task directory.
    Run {
        task_dir: PathBuf,
        /// Wall-clock budget, e.g. `12h` or `90s`.
        #[arg(long, value_parser = humantime::parse_duration)]
        budget: Option<std::time::Duration>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use deterministic local backends instead of the HTTP endpoint.
        #[arg(long)]
        offline: bool,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Continue an interrupted run from its trace.
    Resume {
        trace: PathBuf,
        /// Drop a torn trailing line instead of refusing to resume.
        #[arg(long)]
        repair: bool,
        #[arg(long)]
        offline: bool,
    },
    /// Print the metrics table and per-branch summary of a trace.
    Report {
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check a task directory without running anything.
    ValidateTask { task_dir: PathBuf },
    /// Write a synthetic classification task for offline runs.
    InitSynthetic {
        dir: PathBuf,
        #[arg(long, default_value_t = 400)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NO_SUBMISSION: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<OrchestratorError>() {
        Some(OrchestratorError::Config(_) | OrchestratorError::Task(_)) => EXIT_CONFIG,
        Some(OrchestratorError::Eval(EvalError::AllCandidatesFailed)) => EXIT_NO_SUBMISSION,
        Some(OrchestratorError::Eval(EvalError::Config(_) | EvalError::SourceMissing(_))) => EXIT_CONFIG,
        _ => 1,
    }
}

fn print_outcome(out: &RunOutcome) {
    println!("run directory: {}", out.run_dir.display());
    println!("trace: {}", out.trace_path.display());
    println!("loops: {}  rounds: {}  elapsed: {:.1}s", out.graph.loop_counter, out.rounds, out.elapsed_s);
    if let Some(sel) = &out.final_selection {
        println!(
            "final node: {}  holdout {}: {:.4}  submission: {}",
            sel.node_id,
            sel.grade.metric,
            sel.grade.score,
            sel.submission.display()
        );
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, OrchestratorError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            task_dir,
            budget,
            config,
            seed,
            offline,
            run_dir,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(b) = budget {
                cfg.run.budget_s = b.as_secs_f64();
            }
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            let opts = RunOptions {
                offline,
                run_dir,
                ..RunOptions::default()
            };
            let out = run(&task_dir, &cfg, &opts)?;
            print_outcome(&out);
        }
        Command::Resume { trace, repair, offline } => {
            let opts = RunOptions {
                offline,
                repair,
                ..RunOptions::default()
            };
            let out = resume(&trace, &opts)?;
            print_outcome(&out);
        }
        Command::Report { trace, json } => {
            let events = read_trace(&trace)?;
            let report = build_report(&events);
            if json {
                println!("{}", serde_json_pretty(&report)?);
            } else {
                print!("{}", report.render());
            }
        }
        Command::ValidateTask { task_dir } => {
            let meta = validate_task(&task_dir)?;
            println!(
                "ok: id column {:?}, label column {:?}, grader {:?}",
                meta.id_column, meta.label_column, meta.grader
            );
        }
        Command::InitSynthetic { dir, rows, seed } => {
            write_synthetic_task(&dir, rows, seed).with_context(|| format!("writing {}", dir.display()))?;
            println!("wrote synthetic task to {}", dir.display());
        }
    }
    Ok(())
}

fn serde_json_pretty(report: &rdloop_core::orchestrator::report::RunReport) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
