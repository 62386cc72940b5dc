mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use common::{node, task_spec, Capture};
use rdloop_core::dev::ProcessExecutor;
use rdloop_core::eval::grade::CommandGrader;
use rdloop_core::eval::{
    final_candidates, final_submit, prepare_splits, select_sota, validate_submission, validation_select,
    AccuracyGrader, EvalError, GraderSpec, Grader, Revalidation, SotaEntry, SplitConfig, SplitManifest, TaskMeta,
};
use rdloop_core::model::{ExplorationGraph, NodeId};
use rdloop_core::prompts::PromptLibrary;
use rdloop_core::session::{CallSettings, Session};

fn meta() -> TaskMeta {
    TaskMeta {
        id_column: "id".into(),
        label_column: "label".into(),
        grader: GraderSpec::Accuracy,
        synthetic: false,
    }
}

/// 100 rows, 60 of class 0 and 40 of class 1.
fn toy_task(dir: &Path, label: impl Fn(usize) -> u8) {
    fs::create_dir_all(dir.join("source")).unwrap();
    let mut s = String::from("id,f0,label\n");
    for i in 0..100 {
        s.push_str(&format!("{i},{:.2},{}\n", i as f64 / 100.0, label(i)));
    }
    fs::write(dir.join("source/train.csv"), s).unwrap();
    fs::write(dir.join("source/notes.txt"), "extra file\n").unwrap();
}

fn sixty_forty(i: usize) -> u8 {
    u8::from(i % 5 < 2)
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

fn split(dir: &tempfile::TempDir, label: impl Fn(usize) -> u8) -> SplitManifest {
    toy_task(&dir.path().join("task"), label);
    prepare_splits(&dir.path().join("task"), &dir.path().join("run"), &meta(), &SplitConfig::default(), 7).unwrap()
}

#[test]
fn stratified_split_keeps_class_shares() {
    let dir = tempfile::tempdir().unwrap();
    let m = split(&dir, sixty_forty);
    assert!(m.stratified);
    assert_eq!((m.train_rows, m.test_rows), (90, 10));
    // brute-force count over the emitted files
    let labels = rows(&m.label_file);
    let mut per_class: BTreeMap<String, i64> = BTreeMap::new();
    for r in &labels {
        *per_class.entry(r[1].clone()).or_default() += 1;
    }
    assert_eq!(labels.len(), 10);
    assert!((per_class["0"] - 6).abs() <= 1 && (per_class["1"] - 4).abs() <= 1, "{per_class:?}");

    let train_ids: BTreeSet<String> = rows(&m.train_path()).into_iter().map(|r| r[0].clone()).collect();
    let test = rows(&m.test_path());
    let test_ids: BTreeSet<String> = test.iter().map(|r| r[0].clone()).collect();
    let label_ids: BTreeSet<String> = labels.iter().map(|r| r[0].clone()).collect();
    assert!(train_ids.is_disjoint(&test_ids));
    assert_eq!(train_ids.len() + test_ids.len(), 100);
    assert_eq!(test_ids, label_ids);
    let header = csv::Reader::from_path(m.test_path()).unwrap().headers().unwrap().clone();
    assert!(!header.iter().any(|h| h == "label"));
    assert!(m.input_dir.join("notes.txt").is_file());
    assert!(!m.label_file.starts_with(&m.input_dir));
}

#[test]
fn split_is_reproducible_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = split(&a, sixty_forty);
    let mb = split(&b, sixty_forty);
    assert_eq!(fs::read(&ma.label_file).unwrap(), fs::read(&mb.label_file).unwrap());
}

#[test]
fn single_class_falls_back_to_a_random_split() {
    let dir = tempfile::tempdir().unwrap();
    let m = split(&dir, |_| 1);
    assert!(!m.stratified);
    assert_eq!((m.train_rows, m.test_rows), (90, 10));
}

#[test]
fn missing_source_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = prepare_splits(dir.path(), &dir.path().join("run"), &meta(), &SplitConfig::default(), 0);
    assert!(matches!(err, Err(EvalError::SourceMissing(_))));
}

/// Holdout labels with the first `wrong` of them flipped.
fn predictions(m: &SplitManifest, wrong: usize) -> String {
    let mut s = String::from("id,label\n");
    for (i, r) in rows(&m.label_file).iter().enumerate() {
        let v: u8 = r[1].parse().unwrap();
        s.push_str(&format!("{},{}\n", r[0], if i < wrong { 1 - v } else { v }));
    }
    s
}

#[test]
fn accuracy_grades_by_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    let m = split(&dir, sixty_forty);
    let sub = dir.path().join("sub.csv");
    fs::write(&sub, predictions(&m, 0)).unwrap();
    let g = AccuracyGrader::default().grade(&sub, &m).unwrap();
    assert_eq!((g.score, g.metric.as_str()), (1.0, "accuracy"));
    fs::write(&sub, predictions(&m, 1)).unwrap();
    assert_eq!(AccuracyGrader::default().grade(&sub, &m).unwrap().score, 0.9);
}

fn command_grader(dir: &Path, script: &str) -> CommandGrader {
    CommandGrader {
        command: vec!["sh".into(), "-c".into(), script.into()],
        metric: "accuracy".into(),
        task_dir: dir.to_path_buf(),
        work_root: dir.join("grading"),
        timeout_s: 10.0,
    }
}

#[test]
fn command_grader_contract() {
    let dir = tempfile::tempdir().unwrap();
    let m = split(&dir, sixty_forty);
    let sub = dir.path().join("sub.csv");
    fs::write(&sub, predictions(&m, 0)).unwrap();

    let ok = command_grader(dir.path(), "test -f label.csv && test -f submission.csv && echo '{\"score\": 0.75, \"metric\": \"accuracy\"}'");
    assert_eq!(ok.grade(&sub, &m).unwrap().score, 0.75);
    let chatty = command_grader(dir.path(), "echo grading; echo '{\"score\": 1, \"metric\": \"accuracy\"}'");
    assert!(matches!(chatty.grade(&sub, &m), Err(EvalError::MalformedGradeOutput(_))));
    let crash = command_grader(dir.path(), "echo boom >&2; exit 2");
    match crash.grade(&sub, &m) {
        Err(EvalError::GraderCrash(msg)) => assert!(msg.contains("boom")),
        other => panic!("{other:?}"),
    }
    let slow = CommandGrader {
        timeout_s: 0.2,
        ..command_grader(dir.path(), "sleep 5")
    };
    assert!(matches!(slow.grade(&sub, &m), Err(EvalError::GraderCrash(_))));
}

#[test]
fn submission_checks() {
    let dir = tempfile::tempdir().unwrap();
    let m = split(&dir, sixty_forty);
    let sub = dir.path().join("sub.csv");
    fs::write(&sub, predictions(&m, 2)).unwrap();
    assert!(validate_submission(&sub, &m.sample_submission_path()).is_empty());
    fs::write(&sub, predictions(&m, 0).replacen("id,label", "id,target", 1)).unwrap();
    assert!(validate_submission(&sub, &m.sample_submission_path())[0].starts_with("column mismatch"));
    let constant: String = rows(&m.label_file)
        .iter()
        .fold(String::from("id,label\n"), |acc, r| acc + &format!("{},1\n", r[0]));
    fs::write(&sub, constant).unwrap();
    let v = validate_submission(&sub, &m.sample_submission_path());
    assert!(v.iter().any(|s| s.contains("constant predictions")), "{v:?}");
}

/// Solution script that writes a fixed submission.
fn writer(content: &str) -> String {
    format!("cat > \"$OUTPUT_DIR/submission.csv\" <<'EOF'\n{content}EOF\n")
}

struct Fixture {
    dir: tempfile::TempDir,
    manifest: SplitManifest,
    executor: ProcessExecutor,
    grader: AccuracyGrader,
    task: rdloop_core::model::TaskSpec,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let manifest = split(&dir, sixty_forty);
        Fixture {
            dir,
            manifest,
            executor: ProcessExecutor {
                command: vec!["sh".into(), "{entrypoint}".into()],
                entrypoint: "main.sh".into(),
                ..ProcessExecutor::default()
            },
            grader: AccuracyGrader::default(),
            task: task_spec(),
        }
    }

    fn ctx(&self) -> Revalidation<'_> {
        Revalidation {
            manifest: &self.manifest,
            executor: &self.executor,
            grader: &self.grader,
            task: &self.task,
            work_dir: self.dir.path().join("final_runs"),
            cap_s: 10.0,
        }
    }

    fn scoring(&self, wrong: usize) -> String {
        writer(&predictions(&self.manifest, wrong))
    }
}

#[test]
fn validation_select_ranks_by_holdout() {
    let f = Fixture::new();
    let nodes = [
        node(1, 0, &[], Some(0.95), &f.scoring(3)),
        node(2, 1, &[], Some(0.80), &f.scoring(1)),
        node(3, 2, &[], Some(0.85), &f.scoring(2)),
    ];
    let refs: Vec<_> = nodes.iter().collect();
    let ranked = validation_select(&refs, &f.ctx(), 3);
    let order: Vec<(u64, f64)> = ranked.iter().map(|r| (r.node_id.0, r.grade.as_ref().unwrap().score)).collect();
    assert_eq!(order, vec![(2, 0.9), (3, 0.8), (1, 0.7)]);
}

#[test]
fn validation_select_single_and_crashing_candidates() {
    let f = Fixture::new();
    let only = node(4, 0, &[], Some(0.5), &f.scoring(0));
    let ranked = validation_select(&[&only], &f.ctx(), 3);
    assert_eq!(ranked.len(), 1);
    assert_eq!(ranked[0].node_id, NodeId(4));

    let crash = node(1, 0, &[], Some(0.99), "exit 3\n");
    let fine = node(2, 1, &[], Some(0.5), &f.scoring(5));
    let ranked = validation_select(&[&crash, &fine], &f.ctx(), 3);
    assert_eq!(ranked[0].node_id, NodeId(2));
    assert_eq!(ranked[1].node_id, NodeId(1));
    assert!(ranked[1].grade.is_none() && ranked[1].failure.is_some());
}

#[test]
fn validation_select_keeps_the_top_k_by_validation() {
    let f = Fixture::new();
    let nodes = [
        node(1, 0, &[], Some(0.6), &f.scoring(0)),
        node(2, 1, &[], Some(0.9), &f.scoring(4)),
        node(3, 2, &[], Some(0.8), &f.scoring(3)),
    ];
    let refs: Vec<_> = nodes.iter().collect();
    let ids: BTreeSet<u64> = validation_select(&refs, &f.ctx(), 2).iter().map(|r| r.node_id.0).collect();
    assert_eq!(ids, BTreeSet::from([2, 3]));
}

fn graph(nodes: Vec<rdloop_core::model::Node>) -> ExplorationGraph {
    let mut g = ExplorationGraph::new(0);
    for n in nodes {
        g.commit(n).unwrap();
    }
    g
}

#[test]
fn final_submit_follows_the_holdout_not_validation() {
    let f = Fixture::new();
    // validation favours node 1, the holdout favours node 2; the oracle grades both directly
    let mut g = graph(vec![
        node(1, 0, &[], Some(0.95), &f.scoring(4)),
        node(2, 1, &[], Some(0.70), &f.scoring(1)),
    ]);
    let out = f.dir.path().join("final");
    let sel = final_submit(&mut g, &f.ctx(), 5, None, &out).unwrap();
    assert_eq!(sel.node_id, NodeId(2));
    assert_eq!(sel.grade.score, 0.9);
    assert_eq!(fs::read_to_string(&sel.submission).unwrap(), predictions(&f.manifest, 1));
    assert_eq!(g.node(NodeId(1)).unwrap().holdout.as_ref().unwrap().value, 0.6);
    // validation scores are kept beside the holdout grade
    assert_eq!(g.node(NodeId(1)).unwrap().score.as_ref().unwrap().value, 0.95);
}

#[test]
fn final_submit_on_a_single_branch_takes_its_best() {
    let f = Fixture::new();
    let mut g = graph(vec![
        node(1, 0, &[], Some(0.6), &f.scoring(3)),
        node(2, 0, &[1], Some(0.8), &f.scoring(2)),
        node(3, 0, &[2], None, "exit 1\n"),
    ]);
    assert_eq!(final_candidates(&g).iter().map(|n| n.id.0).collect::<Vec<_>>(), vec![2]);
    let sel = final_submit(&mut g, &f.ctx(), 5, None, &f.dir.path().join("final")).unwrap();
    assert_eq!(sel.node_id, NodeId(2));
}

#[test]
fn final_submit_on_an_empty_graph_fails() {
    let f = Fixture::new();
    let mut g = ExplorationGraph::new(0);
    let err = final_submit(&mut g, &f.ctx(), 5, None, &f.dir.path().join("final"));
    assert!(matches!(err, Err(EvalError::AllCandidatesFailed)));
}

#[test]
fn final_submit_fails_when_every_rerun_fails() {
    let f = Fixture::new();
    let mut g = graph(vec![node(1, 0, &[], Some(0.9), "exit 1\n")]);
    let err = final_submit(&mut g, &f.ctx(), 5, None, &f.dir.path().join("final"));
    assert!(matches!(err, Err(EvalError::AllCandidatesFailed)));
}

fn entries(scores: &[Option<f64>]) -> Vec<SotaEntry> {
    scores
        .iter()
        .enumerate()
        .map(|(i, v)| SotaEntry::from_node(&node(i as u64 + 1, i as u32, &[], *v, "")))
        .collect()
}

#[test]
fn sota_selection() {
    let task = task_spec();
    assert_eq!(select_sota(&entries(&[Some(0.1)]), &task, None), Some(0));
    assert_eq!(select_sota(&entries(&[Some(0.5), Some(0.8), Some(0.8)]), &task, None), Some(1));

    let backend = Capture::new(&[("select_sota", "{\"selected_SOTA_idx\": 2}"), ("select_sota", "I pick the third")]);
    let lib = PromptLibrary::default();
    let settings = CallSettings::default();
    let session = Session::new(&backend, &lib, &settings, "t", "final");
    let three = entries(&[Some(0.9), Some(0.5), Some(0.6)]);
    assert_eq!(select_sota(&three, &task, Some(&session)), Some(2));
    // unusable reply falls back to the offline rule
    assert_eq!(select_sota(&three, &task, Some(&session)), Some(0));
}
