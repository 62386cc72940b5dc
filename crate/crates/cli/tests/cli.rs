use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rdloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdloop"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn task(dir: &Path) -> std::path::PathBuf {
    let t = dir.join("task");
    let o = rdloop(&["init-synthetic", s(&t), "--seed", "3", "--rows", "300"]);
    assert!(o.status.success(), "{}", stderr(&o));
    t
}

#[test]
fn offline_run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let t = task(dir.path());
    let v = rdloop(&["validate-task", s(&t)]);
    assert!(v.status.success());
    assert!(stdout(&v).starts_with("ok:"));

    let run_dir = dir.path().join("run");
    let o = rdloop(&["run", s(&t), "--offline", "--budget", "40s", "--seed", "3", "--run-dir", s(&run_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("final node:"), "{out}");
    assert!(run_dir.join("final/submission.csv").is_file());

    let trace = run_dir.join("trace.jsonl");
    let table = rdloop(&["report", s(&trace)]);
    assert!(table.status.success());
    assert!(stdout(&table).contains("final_holdout"));
    let json = rdloop(&["report", s(&trace), "--json"]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert!(parsed["loops"].as_u64().unwrap() > 0);
    assert!(parsed["final_node"].is_u64());

    // a finished run resumes to the same answer
    let again = rdloop(&["resume", s(&trace)]);
    assert!(again.status.success(), "{}", stderr(&again));
    let final_line = |t: &str| t.lines().find(|l| l.starts_with("final node:")).map(str::to_string);
    assert_eq!(final_line(&stdout(&again)), final_line(&out));
}

#[test]
fn configuration_and_task_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let t = task(dir.path());
    let zero = rdloop(&["run", s(&t), "--offline", "--budget", "0s", "--run-dir", s(&dir.path().join("r0"))]);
    assert_eq!(zero.status.code(), Some(2));
    assert!(stderr(&zero).contains("budget"));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[run]\nbranch_count = 0\n").unwrap();
    let bad = rdloop(&["run", s(&t), "--offline", "--config", s(&cfg), "--run-dir", s(&dir.path().join("r1"))]);
    assert_eq!(bad.status.code(), Some(2), "{}", stderr(&bad));

    let missing = rdloop(&["validate-task", s(&dir.path().join("nowhere"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn a_budget_too_small_for_any_loop_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let t = task(dir.path());
    let o = rdloop(&["run", s(&t), "--offline", "--budget", "1ms", "--run-dir", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("no candidate"));
    let report = rdloop(&["report", s(&dir.path().join("run/trace.jsonl")), "--json"]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&report)).unwrap();
    assert_eq!(parsed["final_failed"], true);
}

#[test]
fn torn_trace_needs_repair() {
    let dir = tempfile::tempdir().unwrap();
    let t = task(dir.path());
    let run_dir = dir.path().join("run");
    assert!(rdloop(&["run", s(&t), "--offline", "--budget", "30s", "--run-dir", s(&run_dir)]).status.success());
    let trace = run_dir.join("trace.jsonl");
    let mut text = fs::read_to_string(&trace).unwrap();
    text.push_str("{\"seq\":");
    fs::write(&trace, text).unwrap();
    let refused = rdloop(&["resume", s(&trace)]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(stderr(&refused).contains("corrupt"));
    let repaired = rdloop(&["resume", s(&trace), "--repair"]);
    assert!(repaired.status.success(), "{}", stderr(&repaired));
}
