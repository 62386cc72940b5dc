//! The debug-information block printed by solutions run with `--debug`.

use thiserror::Error;

pub const START_MARKER: &str = "=== Start of Debug Information ===";
pub const END_MARKER: &str = "=== End of Debug Information ===";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DebugBlockError {
    #[error("no complete debug information block in output")]
    BlockMissing,
    #[error("debug block lacks field {0:?}")]
    FieldMissing(&'static str),
    #[error("debug block field {field:?} is not a finite number: {value:?}")]
    NonNumericValue { field: &'static str, value: String },
}

/// Renders a block that [`parse_debug_block`] reads back exactly.
pub fn format_debug_block(debug_time_s: f64, estimated_time_s: f64) -> String {
    format!("{START_MARKER}\ndebug_time: {debug_time_s}\nestimated_time: {estimated_time_s}\n{END_MARKER}\n")
}

/// Returns `(debug_time_s, estimated_time_s)` from the last complete block.
/// Unrelated lines inside the block are ignored.
pub fn parse_debug_block(stdout: &str) -> Result<(f64, f64), DebugBlockError> {
    let lines: Vec<&str> = stdout.lines().map(str::trim).collect();
    let mut block = None;
    let mut open = None;
    for (i, line) in lines.iter().enumerate() {
        if *line == START_MARKER {
            open = Some(i);
        } else if *line == END_MARKER {
            if let Some(start) = open.take() {
                block = Some(&lines[start + 1..i]);
            }
        }
    }
    let block = block.ok_or(DebugBlockError::BlockMissing)?;
    let field = |name: &'static str| -> Result<f64, DebugBlockError> {
        let raw = block
            .iter()
            .rev()
            .find_map(|l| {
                let (k, v) = l.split_once(':')?;
                (k.trim() == name).then(|| v.trim())
            })
            .ok_or(DebugBlockError::FieldMissing(name))?;
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| DebugBlockError::NonNumericValue {
                field: name,
                value: raw.to_string(),
            })
    };
    Ok((field("debug_time")?, field("estimated_time")?))
}
