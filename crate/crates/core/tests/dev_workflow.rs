mod common;

use std::fs;

use common::{plan, task_spec, Capture};
use rdloop_core::dev::{
    coding_loop, draft_solution, run_debug, run_full, DevConfig, DevError, DraftRequest, Executor, ProcessExecutor,
    RunMode, Workspace, EXCEEDS_CAP, MISSING_SUBMISSION, TIMEOUT_MARKER,
};
use rdloop_core::model::Hypothesis;
use rdloop_core::planner::Stage;
use rdloop_core::prompts::{self, PromptLibrary};
use rdloop_core::session::{CallSettings, Session};

fn sh() -> ProcessExecutor {
    ProcessExecutor {
        command: vec!["sh".into(), "{entrypoint}".into()],
        entrypoint: "main.sh".into(),
        ..ProcessExecutor::default()
    }
}

fn workspace(dir: &tempfile::TempDir) -> Workspace {
    let input = dir.path().join("input");
    fs::create_dir_all(&input).unwrap();
    fs::write(input.join("test.csv"), "id,f0\n1,0.5\n").unwrap();
    Workspace::create(dir.path().join("ws"), input).unwrap()
}

/// Prints a debug block in debug mode, writes a submission otherwise.
fn script(debug_s: f64, estimate_s: f64) -> String {
    format!(
        "if [ \"$1\" = \"--debug\" ]; then\n  echo 'sampling rows'\n  echo '=== Start of Debug Information ==='\n  echo 'debug_time: {debug_s}'\n  echo 'estimated_time: {estimate_s}'\n  echo '=== End of Debug Information ==='\nelse\n  printf 'id,label\\n1,0\\n' > \"$OUTPUT_DIR/submission.csv\"\nfi\n"
    )
}

const CRASH: &str = "echo 'Traceback (most recent call last):' >&2\necho \"KeyError: 'f9'\" >&2\nexit 1\n";

#[test]
fn debug_run_parses_the_block() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    let r = run_debug(&script(1.0, 30.0), &ws, &sh(), 10.0).unwrap();
    assert!(r.exit_ok, "{r:?}");
    assert_eq!((r.debug_time_s, r.estimated_time_s), (Some(1.0), Some(30.0)));
    assert!(r.stdout_tail.contains("sampling rows"));
}

#[test]
fn debug_run_past_the_cap_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    let r = run_debug("echo started\nsleep 5\n", &ws, &sh(), 0.3).unwrap();
    assert!(!r.exit_ok && r.timed_out);
    assert!(r.problem.unwrap().starts_with(TIMEOUT_MARKER));
    assert!(r.wall_time_s < 3.0);
}

#[test]
fn crashing_debug_run_keeps_the_traceback() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    let r = run_debug(CRASH, &ws, &sh(), 10.0).unwrap();
    assert!(!r.exit_ok);
    assert!(r.stderr_tail.contains("Traceback"));
    assert!(r.stderr_tail.contains("KeyError: 'f9'"));
}

#[test]
fn debug_run_without_block_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    let r = run_debug("echo no block here\n", &ws, &sh(), 10.0).unwrap();
    assert!(!r.exit_ok);
    assert!(r.problem.unwrap().contains("no complete debug information block"));
}

#[test]
fn non_positive_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    assert_eq!(run_debug("true\n", &ws, &sh(), 0.0), Err(DevError::InvalidCap(0.0)));
    assert_eq!(run_full("true\n", &ws, &sh(), -1.0), Err(DevError::InvalidCap(-1.0)));
}

#[test]
fn full_run_finds_the_submission() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    let r = run_full(&script(1.0, 2.0), &ws, &sh(), 10.0).unwrap();
    assert!(r.exit_ok);
    assert_eq!(r.submission_path, Some(ws.submission_path()));
}

#[test]
fn full_run_without_submission_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    let r = run_full("echo done\n", &ws, &sh(), 10.0).unwrap();
    assert!(!r.exit_ok);
    assert!(r.failure.unwrap().starts_with(MISSING_SUBMISSION));
}

#[test]
fn full_run_timeout_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    let r = run_full("echo epoch 1\nsleep 5\n", &ws, &sh(), 0.5).unwrap();
    assert!(!r.exit_ok && r.timed_out);
    assert!(r.stdout_tail.contains("epoch 1"));
    assert!(r.failure.unwrap().starts_with(TIMEOUT_MARKER));
}

#[test]
fn stale_submission_from_an_earlier_run_is_cleared() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    assert!(run_full(&script(1.0, 2.0), &ws, &sh(), 10.0).unwrap().exit_ok);
    assert!(!run_full("true\n", &ws, &sh(), 10.0).unwrap().exit_ok);
}

#[test]
fn environment_is_cleared_except_the_whitelist() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    std::env::set_var("RDLOOP_SECRET_FOR_TEST", "leak");
    let out = sh()
        .execute("echo \"[$RDLOOP_SECRET_FOR_TEST]\"\necho \"$INPUT_DIR\"\n", &ws, RunMode::Full, 10.0)
        .unwrap();
    assert!(out.stdout.contains("[]"));
    assert!(out.stdout.contains(&ws.input_dir.display().to_string()));
}

#[test]
fn sleeping_grandchildren_are_killed_with_the_group() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    let started = std::time::Instant::now();
    let out = sh().execute("sleep 30 &\nsleep 30\n", &ws, RunMode::Full, 0.3).unwrap();
    assert!(out.timed_out);
    // the pipes close only once every process holding them has exited
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

fn hypothesis() -> Hypothesis {
    Hypothesis {
        text: "Use gradient boosting on raw features".into(),
        ..Hypothesis::placeholder("x")
    }
}

fn fenced(code: &str) -> String {
    format!("Here is the solution.\n```sh\n{code}```\n")
}

#[test]
fn draft_returns_the_script_and_forwards_constraints() {
    let code = script(1.0, 2.0);
    let backend = Capture::new(&[("draft", &fenced(&code)), ("draft", &fenced(&code))]);
    let lib = PromptLibrary::default();
    let settings = CallSettings::default();
    let session = Session::new(&backend, &lib, &settings, "t", "b0");
    let task = task_spec();
    let h = hypothesis();
    let draft_plan = plan(Stage::Draft, 60.0);
    let req = DraftRequest {
        hypothesis: &h,
        parent_code: None,
        task: &task,
        plan: &draft_plan,
        merge: None,
    };
    assert_eq!(draft_solution(&req, None, &session).unwrap(), code);
    let improve_plan = plan(Stage::Improve, 60.0);
    let req = DraftRequest {
        parent_code: Some("echo parent-code-marker\n"),
        plan: &improve_plan,
        ..req
    };
    draft_solution(&req, None, &session).unwrap();

    let prompts_seen = backend.prompts_for("draft");
    assert!(prompts_seen[0].contains(prompts::FORBID_ENSEMBLE));
    assert!(prompts_seen[0].contains(&h.text));
    assert!(prompts_seen[1].contains("echo parent-code-marker"));
    assert!(prompts_seen[1].contains(prompts::EDIT_PARENT));
    assert!(!prompts_seen[1].contains(prompts::FORBID_ENSEMBLE));
}

fn run_loop_with(replies: &[&str], cap_s: f64, remaining_s: f64) -> (rdloop_core::dev::CodingOutcome, Capture) {
    let pairs: Vec<(&str, String)> = replies.iter().map(|r| ("draft", fenced(r))).collect();
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(s, t)| (*s, t.as_str())).collect();
    let backend = Capture::new(&refs);
    let lib = PromptLibrary::default();
    let settings = CallSettings::default();
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(&dir);
    let task = task_spec();
    let h = hypothesis();
    let p = plan(Stage::Improve, cap_s);
    let req = DraftRequest {
        hypothesis: &h,
        parent_code: None,
        task: &task,
        plan: &p,
        merge: None,
    };
    let cfg = DevConfig {
        max_debug_attempts: 3,
        ..DevConfig::default()
    };
    let outcome = {
        let session = Session::new(&backend, &lib, &settings, "t", "b0");
        coding_loop(&req, &session, &sh(), &ws, &cfg, remaining_s)
    };
    (outcome, backend)
}

#[test]
fn second_draft_passes_and_runs_in_full() {
    let (out, backend) = run_loop_with(&[CRASH, &script(0.5, 2.0)], 30.0, 1000.0);
    assert!(out.succeeded(), "{}", out.feedback);
    assert_eq!(out.attempts.len(), 2);
    assert!(!out.attempts[0].report.exit_ok && out.attempts[1].report.exit_ok);
    // the revision prompt carries the failure
    assert!(backend.prompts_for("draft")[1].contains("KeyError: 'f9'"));
}

#[test]
fn exhausted_attempts_skip_the_full_run() {
    let (out, _) = run_loop_with(&[CRASH, CRASH, CRASH], 30.0, 1000.0);
    assert!(!out.succeeded());
    assert!(out.full.is_none());
    assert_eq!(out.attempts.len(), 3);
    assert!(out.feedback.contains("gave up after 3 debug attempts"));
}

#[test]
fn estimate_over_the_cap_blocks_the_full_run() {
    let (out, _) = run_loop_with(&[&script(0.5, 100.0)], 10.0, 1000.0);
    assert!(out.full.is_none());
    assert_eq!(out.attempts.len(), 1);
    assert!(out.feedback.contains(EXCEEDS_CAP));
}

#[test]
fn estimate_over_the_budget_share_blocks_the_full_run() {
    // fits the cap, but not 0.8 of the 10 s left
    let (out, _) = run_loop_with(&[&script(0.5, 9.0)], 30.0, 10.0);
    assert!(out.full.is_none());
    assert!(out.feedback.contains(EXCEEDS_CAP));
}
