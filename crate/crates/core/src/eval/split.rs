//! Fixed train/holdout split, stratified by class where feasible.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, TaskMeta};

pub const LABEL_FILE: &str = "label.csv";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const SAMPLE_SUBMISSION_FILE: &str = "sample_submission.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Label columns with more distinct values than this are split at random.
    pub max_classes: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.9,
            max_classes: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_fraction: f64,
    pub stratified: bool,
    pub class_column: Option<String>,
    pub id_column: String,
    pub label_column: String,
    pub seed: u64,
    /// Solution-visible directory holding train, test and sample submission.
    pub input_dir: PathBuf,
    pub label_file: PathBuf,
    pub train_rows: usize,
    pub test_rows: usize,
}

impl SplitManifest {
    pub fn train_path(&self) -> PathBuf {
        self.input_dir.join(TRAIN_FILE)
    }

    pub fn test_path(&self) -> PathBuf {
        self.input_dir.join(TEST_FILE)
    }

    pub fn sample_submission_path(&self) -> PathBuf {
        self.input_dir.join(SAMPLE_SUBMISSION_FILE)
    }
}

/// Per-class holdout quotas: largest-remainder apportionment of `n_test`
/// rows, capped so every class keeps at least one training row.
pub fn stratified_quotas(class_counts: &[usize], n_test: usize) -> Vec<usize> {
    let total: usize = class_counts.iter().sum();
    if total == 0 {
        return vec![0; class_counts.len()];
    }
    let cap = |c: usize| c.saturating_sub(1);
    let exact: Vec<f64> = class_counts
        .iter()
        .map(|c| *c as f64 * n_test as f64 / total as f64)
        .collect();
    let mut quotas: Vec<usize> = exact
        .iter()
        .zip(class_counts)
        .map(|(e, c)| (e.floor() as usize).min(cap(*c)))
        .collect();
    let mut order: Vec<usize> = (0..class_counts.len()).collect();
    order.sort_by(|a, b| {
        let ra = exact[*a] - exact[*a].floor();
        let rb = exact[*b] - exact[*b].floor();
        rb.total_cmp(&ra).then(a.cmp(b))
    });
    let mut assigned: usize = quotas.iter().sum();
    // Two passes: remainders first, then any class with spare capacity.
    for pass in 0..2 {
        for &i in &order {
            if assigned >= n_test {
                break;
            }
            let room = pass == 1 || quotas[i] as f64 + 1.0 <= exact[i].ceil();
            if room && quotas[i] < cap(class_counts[i]) {
                quotas[i] += 1;
                assigned += 1;
            }
        }
    }
    while assigned < n_test {
        let Some(i) = order.iter().copied().find(|i| quotas[*i] < cap(class_counts[*i])) else {
            break;
        };
        quotas[i] += 1;
        assigned += 1;
    }
    quotas
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), EvalError> {
    let werr = |e: csv::Error| EvalError::WriteFailure(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(werr)?;
    w.write_record(header).map_err(werr)?;
    for r in rows {
        w.write_record(&r).map_err(werr)?;
    }
    w.flush()
        .map_err(|e| EvalError::WriteFailure(format!("{}: {e}", path.display())))
}

/// Splits `<task_dir>/source/train.csv` into `<run_dir>/split` (train, test
/// without labels, sample submission) and `<run_dir>/holdout/label.csv`.
/// Other files under `source/` are copied into the split directory.
pub fn prepare_splits(
    task_dir: &Path,
    run_dir: &Path,
    meta: &TaskMeta,
    cfg: &SplitConfig,
    seed: u64,
) -> Result<SplitManifest, EvalError> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(EvalError::Config(format!(
            "train_fraction must be in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    let source_dir = task_dir.join("source");
    let source = source_dir.join(TRAIN_FILE);
    if !source.is_file() {
        return Err(EvalError::SourceMissing(source));
    }
    let rerr = |e: csv::Error| EvalError::SourceMissing(PathBuf::from(format!("{}: {e}", source.display())));
    let mut reader = csv::Reader::from_path(&source).map_err(rerr)?;
    let header: Vec<String> = reader.headers().map_err(rerr)?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EvalError::Config(format!("column {name:?} not in {}", source.display())))
    };
    let id_idx = col(&meta.id_column)?;
    let label_idx = col(&meta.label_column)?;
    let rows: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(rerr)?;
    if rows.len() < 2 {
        return Err(EvalError::Config(format!("{} needs at least two rows", source.display())));
    }

    let n = rows.len();
    let n_test = (((1.0 - cfg.train_fraction) * n as f64).round() as usize).clamp(1, n - 1);
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_class.entry(r[label_idx].as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stratified = (2..=cfg.max_classes).contains(&by_class.len());
    let mut is_test = vec![false; n];
    if stratified {
        let counts: Vec<usize> = by_class.values().map(Vec::len).collect();
        let quotas = stratified_quotas(&counts, n_test);
        for (members, q) in by_class.values().zip(quotas) {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            for i in &members[..q] {
                is_test[*i] = true;
            }
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        for i in &all[..n_test] {
            is_test[*i] = true;
        }
    }

    let input_dir = run_dir.join("split");
    let holdout_dir = run_dir.join("holdout");
    for d in [&input_dir, &holdout_dir] {
        fs::create_dir_all(d).map_err(|e| EvalError::WriteFailure(format!("{}: {e}", d.display())))?;
    }
    let copy_err = |p: &Path, e: std::io::Error| EvalError::WriteFailure(format!("{}: {e}", p.display()));
    for entry in fs::read_dir(&source_dir).map_err(|e| copy_err(&source_dir, e))? {
        let entry = entry.map_err(|e| copy_err(&source_dir, e))?;
        let path = entry.path();
        if path.is_file() && entry.file_name() != TRAIN_FILE {
            fs::copy(&path, input_dir.join(entry.file_name())).map_err(|e| copy_err(&path, e))?;
        }
    }

    let test_header: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let pair_header = vec![meta.id_column.clone(), meta.label_column.clone()];
    let placeholder = rows
        .iter()
        .zip(&is_test)
        .find(|(_, t)| !**t)
        .map(|(r, _)| r[label_idx].clone())
        .unwrap_or_default();

    write_csv(
        &input_dir.join(TRAIN_FILE),
        &header,
        rows.iter().zip(&is_test).filter(|(_, t)| !**t).map(|(r, _)| r.clone()),
    )?;
    let test_rows = || rows.iter().zip(&is_test).filter(|(_, t)| **t).map(|(r, _)| r);
    write_csv(
        &input_dir.join(TEST_FILE),
        &test_header,
        test_rows().map(|r| {
            r.iter()
                .enumerate()
                .filter(|(i, _)| *i != label_idx)
                .map(|(_, v)| v.clone())
                .collect()
        }),
    )?;
    write_csv(
        &input_dir.join(SAMPLE_SUBMISSION_FILE),
        &pair_header,
        test_rows().map(|r| vec![r[id_idx].clone(), placeholder.clone()]),
    )?;
    let label_file = holdout_dir.join(LABEL_FILE);
    write_csv(
        &label_file,
        &pair_header,
        test_rows().map(|r| vec![r[id_idx].clone(), r[label_idx].clone()]),
    )?;

    Ok(SplitManifest {
        train_fraction: cfg.train_fraction,
        stratified,
        class_column: stratified.then(|| meta.label_column.clone()),
        id_column: meta.id_column.clone(),
        label_column: meta.label_column.clone(),
        seed,
        input_dir,
        label_file,
        train_rows: n - n_test,
        test_rows: n_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotas_follow_class_shares() {
        assert_eq!(stratified_quotas(&[60, 40], 10), vec![6, 4]);
        assert_eq!(stratified_quotas(&[1, 99], 10), vec![0, 10]);
        let q = stratified_quotas(&[33, 33, 34], 10);
        assert_eq!(q.iter().sum::<usize>(), 10);
        assert!(q.iter().all(|v| (3..=4).contains(v)));
    }

    #[test]
    fn tiny_classes_keep_a_training_row() {
        let q = stratified_quotas(&[2, 2, 2], 5);
        assert!(q.iter().all(|v| *v <= 1));
    }
}
