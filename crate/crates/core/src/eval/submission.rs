//! Format and sanity checks of a submission against the sample submission.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

type Table = (Vec<String>, Vec<Vec<String>>);

fn read_table(path: &Path) -> Result<Table, String> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let header = r
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let rows = r
        .records()
        .map(|row| {
            row.map(|row| row.iter().map(|v| v.trim().to_string()).collect())
                .map_err(|e| format!("{}: {e}", path.display()))
        })
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// Returns every violation found; an empty list means the submission is
/// acceptable. Prediction columns must parse as numbers only where the
/// sample's values do.
pub fn validate_submission(submission: &Path, sample: &Path) -> Vec<String> {
    let (sample_header, sample_rows) = match read_table(sample) {
        Ok(t) => t,
        Err(e) => return vec![format!("unreadable sample submission: {e}")],
    };
    let (header, rows) = match read_table(submission) {
        Ok(t) => t,
        Err(e) => return vec![format!("unreadable submission: {e}")],
    };
    if header != sample_header {
        return vec![format!("column mismatch: expected {sample_header:?}, found {header:?}")];
    }
    let mut violations = Vec::new();

    let width = header.len();
    let ragged = rows.iter().filter(|r| r.len() != width).count();
    if ragged > 0 {
        violations.push(format!("{ragged} rows do not have {width} fields"));
    }

    let expected: BTreeSet<&str> = sample_rows.iter().filter_map(|r| r.first()).map(String::as_str).collect();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &rows {
        if let Some(id) = r.first() {
            *seen.entry(id.as_str()).or_default() += 1;
        }
    }
    let missing = expected.iter().filter(|id| !seen.contains_key(*id)).count();
    let unexpected = seen.keys().filter(|id| !expected.contains(*id)).count();
    let duplicated = seen.values().filter(|c| **c > 1).count();
    if missing > 0 {
        violations.push(format!("id coverage: {missing} expected ids missing"));
    }
    if unexpected > 0 {
        violations.push(format!("id coverage: {unexpected} unexpected ids"));
    }
    if duplicated > 0 {
        violations.push(format!("id coverage: {duplicated} ids repeated"));
    }

    for (c, name) in header.iter().enumerate().skip(1) {
        let values: Vec<&str> = rows.iter().map(|r| r.get(c).map_or("", String::as_str)).collect();
        let empty = values.iter().filter(|v| v.is_empty()).count();
        if empty > 0 {
            violations.push(format!("missing values: {empty} empty cells in column {name:?}"));
        }
        let numeric_sample = sample_rows
            .iter()
            .filter_map(|r| r.get(c))
            .all(|v| v.parse::<f64>().is_ok());
        if numeric_sample {
            let bad = values
                .iter()
                .filter(|v| !v.is_empty() && !v.parse::<f64>().is_ok_and(f64::is_finite))
                .count();
            if bad > 0 {
                violations.push(format!("non-numeric values: {bad} cells in column {name:?}"));
            }
        }
        let distinct: BTreeSet<&str> = values.iter().copied().collect();
        if values.len() > 1 && distinct.len() == 1 {
            violations.push(format!("constant predictions in column {name:?}"));
        }
    }
    violations
}
