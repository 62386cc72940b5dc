use std::collections::BTreeMap;

use rdloop_core::backends::synthetic::{write_synthetic_task, Directive, SyntheticExecutor};
use rdloop_core::backends::{SyntheticConfig, SyntheticWorld};
use rdloop_core::dev::{Executor, RunMode, Workspace};
use rdloop_core::eval::{prepare_splits, GraderSpec, SplitConfig, TaskMeta};

fn column(path: &std::path::Path) -> BTreeMap<String, String> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].to_string())
        })
        .collect()
}

#[test]
fn submission_accuracy_tracks_the_landscape_value() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_task(&dir.path().join("task"), 4000, 9).unwrap();
    let meta = TaskMeta {
        id_column: "id".into(),
        label_column: "label".into(),
        grader: GraderSpec::Accuracy,
        synthetic: true,
    };
    let m = prepare_splits(&dir.path().join("task"), &dir.path().join("run"), &meta, &SplitConfig::default(), 9).unwrap();
    let labels = column(&m.label_file);
    assert_eq!(labels.len(), 400);

    let world = SyntheticWorld::new(SyntheticConfig::default());
    let exec = SyntheticExecutor::new(world.clone());
    let dim = world.dimension();
    let mut seen = Vec::new();
    for (i, params) in [vec![0.5; dim], vec![0.1; dim], world.landscape.optimum().to_vec()].into_iter().enumerate() {
        let want = world.value(&params);
        let code = Directive { params, cost_s: 1.0, bug: false }.render();
        let ws = Workspace::create(dir.path().join(format!("ws{i}")), m.input_dir.clone()).unwrap();
        let out = exec.execute(&code, &ws, RunMode::Full, 60.0).unwrap();
        assert!(out.succeeded(), "{out:?}");
        let preds = column(&ws.submission_path());
        let hits = labels.iter().filter(|(id, l)| preds.get(*id) == Some(l)).count();
        let acc = hits as f64 / labels.len() as f64;
        // binomial sd at n = 400 is at most 0.025
        assert!((acc - want).abs() < 0.1, "value {want}, holdout accuracy {acc}");
        seen.push(acc);
    }
    assert!(seen.iter().any(|a| *a > 0.0 && *a < 1.0), "{seen:?}");
}
