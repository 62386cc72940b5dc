mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;

use common::{node, task_spec};
use proptest::prelude::*;
use rdloop_core::dev::{ExecError, ExecOutput, Executor, RunMode, Workspace};
use rdloop_core::eval::{
    prepare_splits, validation_select, AccuracyGrader, GraderSpec, Grader, Revalidation, SplitConfig, SplitManifest,
    TaskMeta,
};
use rdloop_core::model::{ExplorationGraph, Node};
use rdloop_core::planner::{make_plan, stage_at, PlannerConfig};

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: SplitManifest,
    labels: Vec<(String, u8)>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::create_dir_all(root.join("task/source")).unwrap();
        let mut csv = String::from("id,f0,label\n");
        for i in 0..200 {
            csv.push_str(&format!("{i},{},{}\n", i % 7, u8::from(i % 3 == 0)));
        }
        fs::write(root.join("task/source/train.csv"), csv).unwrap();
        let meta = TaskMeta {
            id_column: "id".into(),
            label_column: "label".into(),
            grader: GraderSpec::Accuracy,
            synthetic: false,
        };
        let manifest = prepare_splits(&root.join("task"), &root.join("run"), &meta, &SplitConfig::default(), 1).unwrap();
        let labels = csv::Reader::from_path(&manifest.label_file)
            .unwrap()
            .records()
            .map(|r| {
                let r = r.unwrap();
                (r[0].to_string(), r[1].parse().unwrap())
            })
            .collect();
        Fixture {
            _dir: dir,
            root,
            manifest,
            labels,
        }
    })
}

/// Executor double: `wrong: k` writes the holdout labels with the first k
/// flipped, anything else crashes.
struct Flipper<'a>(&'a [(String, u8)]);

impl Executor for Flipper<'_> {
    fn execute(&self, code: &str, ws: &Workspace, _mode: RunMode, _cap_s: f64) -> Result<ExecOutput, ExecError> {
        let Some(k) = code.strip_prefix("wrong: ").and_then(|k| k.trim().parse::<usize>().ok()) else {
            return Ok(ExecOutput {
                exit_code: Some(1),
                stdout: String::new(),
                stderr: "crash".into(),
                wall_time_s: 0.1,
                timed_out: false,
            });
        };
        let mut s = String::from("id,label\n");
        for (i, (id, l)) in self.0.iter().enumerate() {
            s.push_str(&format!("{id},{}\n", if i < k { 1 - l } else { *l }));
        }
        fs::write(ws.submission_path(), s).unwrap();
        Ok(ExecOutput {
            exit_code: Some(0),
            stdout: String::new(),
            stderr: String::new(),
            wall_time_s: 0.1,
            timed_out: false,
        })
    }
}

fn candidates(specs: &[(Option<usize>, f64)]) -> Vec<Node> {
    specs
        .iter()
        .enumerate()
        .map(|(i, (wrong, v))| {
            let code = wrong.map_or("crash".to_string(), |k| format!("wrong: {k}"));
            node(i as u64, i as u32, &[], Some(*v), &code)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ranking_ignores_candidate_order(
        specs in prop::collection::vec((prop::option::weighted(0.85, 0usize..8), 0.0f64..1.0), 1..6),
        seed in any::<u64>(),
        case in any::<u32>(),
    ) {
        let f = fixture();
        let exec = Flipper(&f.labels);
        let grader = AccuracyGrader::default();
        let task = task_spec();
        let nodes = candidates(&specs);
        let run = |order: Vec<&Node>, tag: &str| {
            let ctx = Revalidation {
                manifest: &f.manifest,
                executor: &exec,
                grader: &grader,
                task: &task,
                work_dir: f.root.join(format!("rv-{case}-{tag}")),
                cap_s: 5.0,
            };
            validation_select(&order, &ctx, nodes.len())
                .into_iter()
                .map(|r| (r.node_id, r.grade.map(|g| g.score), r.failure.is_some()))
                .collect::<Vec<_>>()
        };
        let mut shuffled: Vec<&Node> = nodes.iter().collect();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        prop_assert_eq!(run(nodes.iter().collect(), "a"), run(shuffled, "b"));
    }

    #[test]
    fn grading_is_deterministic(wrong in 0usize..20) {
        let f = fixture();
        let path = f.root.join(format!("det-{wrong}.csv"));
        let mut s = String::from("id,label\n");
        for (i, (id, l)) in f.labels.iter().enumerate() {
            s.push_str(&format!("{id},{}\n", if i < wrong { 1 - l } else { *l }));
        }
        fs::write(&path, s).unwrap();
        let a = AccuracyGrader::default().grade(&path, &f.manifest).unwrap();
        let b = AccuracyGrader::default().grade(&path, &f.manifest).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.score, (f.labels.len() - wrong) as f64 / f.labels.len() as f64);
    }
}

proptest! {
    #[test]
    fn stage_never_moves_backwards(
        budget in 60.0f64..200_000.0,
        mut steps in prop::collection::vec((0.0f64..1.0, 0usize..2), 1..40),
    ) {
        let cfg = PlannerConfig::default();
        steps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut roots = 0;
        let mut prev = None;
        for (frac, new_roots) in steps {
            roots += new_roots;
            let s = stage_at(frac * budget, budget, roots, &cfg);
            if let Some(p) = prev {
                prop_assert!(s >= p, "{:?} after {:?}", s, p);
            }
            prev = Some(s);
        }
    }

    #[test]
    fn plan_depends_only_on_its_inputs(elapsed in 0.0f64..1.0, budget in 1.0f64..100_000.0, branches in 0u32..5) {
        let mut g = ExplorationGraph::new(0);
        for b in 0..branches {
            g.commit(node(b as u64, b, &[], Some(0.5), "")).unwrap();
        }
        let cfg = PlannerConfig::default();
        let a = make_plan(elapsed * budget, budget, &g, &cfg).unwrap();
        let b = make_plan(elapsed * budget, budget, &g, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn fixture_has_both_classes() {
    let counts = fixture().labels.iter().fold(BTreeMap::new(), |mut m, (_, l)| {
        *m.entry(*l).or_insert(0) += 1;
        m
    });
    assert_eq!(counts.len(), 2);
}
