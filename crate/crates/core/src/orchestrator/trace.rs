//! Append-only JSON Lines event log; the source of truth for resume and
//! reporting.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::prune::{prune_branches, PruneRule};
use super::OrchestratorError;
use crate::model::{ExplorationGraph, Node, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LoopStart,
    Plan,
    Pool,
    Selection,
    Draft,
    Debug,
    FullRun,
    Grade,
    NodeCommitted,
    Merge,
    FinalSubmit,
    BackendCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    /// Seconds since the Unix epoch when the event was written.
    pub timestamp: f64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundInfo {
    pub index: u64,
    pub slot: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitPayload {
    pub node: Node,
    /// Run time at which the loop finished.
    pub elapsed_s: f64,
    pub round: RoundInfo,
    /// Run time after the round, present on the round's last commit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_end_elapsed_s: Option<f64>,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub struct TraceWriter {
    file: File,
    next_seq: u64,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self, OrchestratorError> {
        let file = File::create(path).map_err(|e| OrchestratorError::io(path, e))?;
        Ok(TraceWriter { file, next_seq: 0 })
    }

    pub fn append_to(path: &Path, next_seq: u64) -> Result<Self, OrchestratorError> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| OrchestratorError::io(path, e))?;
        Ok(TraceWriter { file, next_seq })
    }

    /// Writes one event as a single line. Commits and the final submission
    /// are flushed to disk before returning.
    pub fn append(
        &mut self,
        kind: EventKind,
        loop_index: Option<u64>,
        node: Option<NodeId>,
        payload: Value,
    ) -> Result<(), OrchestratorError> {
        let event = TraceEvent {
            seq: self.next_seq,
            timestamp: now_unix(),
            kind,
            loop_index,
            node,
            payload,
        };
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| OrchestratorError::Io(format!("trace write: {e}")))?;
        if matches!(kind, EventKind::NodeCommitted | EventKind::FinalSubmit) {
            self.file
                .sync_data()
                .map_err(|e| OrchestratorError::Io(format!("trace sync: {e}")))?;
        }
        self.next_seq += 1;
        Ok(())
    }
}

fn last_committed_loop(events: &[TraceEvent]) -> Option<u64> {
    events
        .iter()
        .rev()
        .find(|e| e.kind == EventKind::NodeCommitted)
        .and_then(|e| e.loop_index)
}

/// Parses a trace. A line that is not a complete event (including a final
/// line without its newline) is a torn write and yields `CorruptTrace`.
pub fn read_trace(path: &Path) -> Result<Vec<TraceEvent>, OrchestratorError> {
    let text = fs::read_to_string(path).map_err(|e| OrchestratorError::io(path, e))?;
    let mut events = Vec::new();
    let complete = text.ends_with('\n') || text.is_empty();
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let torn = i + 1 == lines.len() && !complete;
        match serde_json::from_str::<TraceEvent>(line) {
            Ok(e) if !torn => events.push(e),
            _ => {
                return Err(OrchestratorError::CorruptTrace {
                    line: i + 1,
                    last_valid_loop: last_committed_loop(&events),
                })
            }
        }
    }
    Ok(events)
}

/// Byte length of the first `lines` lines of a trace.
pub fn prefix_len(path: &Path, lines: usize) -> Result<u64, OrchestratorError> {
    let text = fs::read(path).map_err(|e| OrchestratorError::io(path, e))?;
    let mut seen = 0;
    for (i, b) in text.iter().enumerate() {
        if seen == lines {
            return Ok(i as u64);
        }
        if *b == b'\n' {
            seen += 1;
        }
    }
    Ok(text.len() as u64)
}

/// Truncates a trace after its last complete line, dropping a torn tail.
pub fn repair_trace(path: &Path) -> Result<usize, OrchestratorError> {
    let text = fs::read(path).map_err(|e| OrchestratorError::io(path, e))?;
    let mut keep = 0;
    let mut kept_lines = 0;
    let mut start = 0;
    for (i, b) in text.iter().enumerate() {
        if *b == b'\n' {
            if serde_json::from_slice::<TraceEvent>(&text[start..i]).is_err() {
                break;
            }
            keep = i + 1;
            kept_lines += 1;
            start = i + 1;
        }
    }
    let file = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| OrchestratorError::io(path, e))?;
    file.set_len(keep as u64).map_err(|e| OrchestratorError::io(path, e))?;
    Ok(kept_lines)
}

/// Graph and clock state rebuilt from the complete rounds of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub graph: ExplorationGraph,
    pub elapsed_s: f64,
    pub rounds: u64,
    /// Number of leading events that belong to complete rounds.
    pub kept_events: usize,
    pub final_submit: Option<Value>,
}

pub fn commit_payload(event: &TraceEvent) -> Result<CommitPayload, OrchestratorError> {
    serde_json::from_value(event.payload.clone())
        .map_err(|e| OrchestratorError::InvalidTrace(format!("event {}: bad commit payload: {e}", event.seq)))
}

/// Re-applies every commit of every complete round, running the same
/// pruning update as the live coordinator. Events after the last complete
/// round are not applied.
pub fn replay(events: &[TraceEvent], created_at: u64, rule: &PruneRule) -> Result<Replay, OrchestratorError> {
    let mut graph = ExplorationGraph::new(created_at);
    let mut pending: Vec<CommitPayload> = Vec::new();
    let mut out = Replay {
        graph: graph.clone(),
        elapsed_s: 0.0,
        rounds: 0,
        kept_events: 0,
        final_submit: None,
    };
    for (i, e) in events.iter().enumerate() {
        match e.kind {
            EventKind::NodeCommitted => {
                let p = commit_payload(e)?;
                let end = p.round_end_elapsed_s;
                pending.push(p);
                if let Some(elapsed) = end {
                    for p in pending.drain(..) {
                        let branch = p.node.branch_id;
                        graph
                            .commit(p.node)
                            .map_err(|err| OrchestratorError::InvalidTrace(format!("event {}: {err}", e.seq)))?;
                        prune_branches(&mut graph, rule, branch);
                    }
                    out.graph = graph.clone();
                    out.elapsed_s = elapsed;
                    out.rounds += 1;
                    out.kept_events = i + 1;
                }
            }
            EventKind::FinalSubmit if pending.is_empty() => {
                out.final_submit = Some(e.payload.clone());
                out.kept_events = i + 1;
            }
            _ => {}
        }
    }
    Ok(out)
}
