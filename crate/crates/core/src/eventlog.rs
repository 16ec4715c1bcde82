//! Append-only JSON-lines event log and JSON snapshots of graph state.
//!
//! Each line is one event carrying its `seq`. Replaying a log, optionally on
//! top of a snapshot, reproduces the graph state at the last applied event.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Annotation, ClusteringDelta, GraphError, GraphSnapshot, IdentityGraph, ReviewDecision};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    AnnotationAdded {
        annotation: Annotation,
    },
    DecisionRecorded {
        decision: ReviewDecision,
        /// Counts toward human effort. Curated seed labels are human-sourced
        /// but carry `false`.
        human_effort: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

impl LogRecord {
    pub fn annotation(annotation: Annotation) -> Self {
        Self {
            seq: annotation.added_at,
            event: Event::AnnotationAdded { annotation },
        }
    }

    pub fn decision(decision: ReviewDecision, human_effort: bool) -> Self {
        Self {
            seq: decision.seq,
            event: Event::DecisionRecorded { decision, human_effort },
        }
    }

    pub fn counts_as_effort(&self) -> bool {
        matches!(self.event, Event::DecisionRecorded { human_effort: true, .. })
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("event seq {seq}: {source}")]
    Apply {
        seq: u64,
        #[source]
        source: GraphError,
    },
    #[error("snapshot: {0}")]
    Snapshot(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Applies one event to a graph.
pub fn apply(graph: &mut IdentityGraph, record: &LogRecord) -> Result<Option<ClusteringDelta>, LogError> {
    let inner_seq = match &record.event {
        Event::AnnotationAdded { annotation } => annotation.added_at,
        Event::DecisionRecorded { decision, .. } => decision.seq,
    };
    if inner_seq != record.seq {
        return Err(LogError::Apply {
            seq: record.seq,
            source: GraphError::NonMonotoneSeq {
                seq: inner_seq,
                last: record.seq,
            },
        });
    }
    let wrap = |source| LogError::Apply {
        seq: record.seq,
        source,
    };
    match &record.event {
        Event::AnnotationAdded { annotation } => {
            graph.add_annotation(annotation.clone()).map_err(wrap)?;
            Ok(None)
        }
        Event::DecisionRecorded { decision, .. } => graph.record_decision(decision.clone()).map(Some).map_err(wrap),
    }
}

/// Replays records on top of an optional snapshot; events at or below the
/// snapshot's seq are skipped.
pub fn replay(records: &[LogRecord], from: Option<&GraphSnapshot>) -> Result<IdentityGraph, LogError> {
    let mut graph = match from {
        Some(snap) => IdentityGraph::from_snapshot(snap).map_err(|e| LogError::Snapshot(e.to_string()))?,
        None => IdentityGraph::new(),
    };
    let floor = from.map_or(0, |s| s.seq);
    for record in records.iter().filter(|r| r.seq > floor) {
        apply(&mut graph, record)?;
    }
    Ok(graph)
}

/// Result of reading a log file. A malformed final line is treated as a
/// truncated write: reading stops there and `truncated_at` names the line.
#[derive(Debug, Clone, Default)]
pub struct ReadLog {
    pub records: Vec<LogRecord>,
    pub truncated_at: Option<usize>,
}

pub fn read_log(path: &Path) -> Result<ReadLog, LogError> {
    let file = File::open(path).map_err(io_err(path))?;
    parse_log(BufReader::new(file)).map_err(|e| match e {
        LogError::Io { source, .. } => io_err(path)(source),
        other => other,
    })
}

pub fn parse_log(reader: impl BufRead) -> Result<ReadLog, LogError> {
    let lines: Vec<String> = reader
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| LogError::Io {
            path: "<reader>".into(),
            source,
        })?;
    let last_nonblank = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = ReadLog::default();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogRecord>(line) {
            Ok(rec) => out.records.push(rec),
            Err(_) if Some(i) == last_nonblank => {
                out.truncated_at = Some(i + 1);
                break;
            }
            Err(e) => {
                return Err(LogError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<(), LogError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        write_record(&mut w, r).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_record(w: &mut impl Write, record: &LogRecord) -> io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

/// Appends records to an existing log, creating it when absent.
pub struct LogAppender {
    path: std::path::PathBuf,
    out: BufWriter<File>,
}

impl LogAppender {
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, records: &[LogRecord]) -> Result<(), LogError> {
        for r in records {
            write_record(&mut self.out, r).map_err(io_err(&self.path))?;
        }
        self.out.flush().map_err(io_err(&self.path))
    }
}

pub fn snapshot_json(snapshot: &GraphSnapshot) -> String {
    serde_json::to_string_pretty(snapshot).expect("snapshot serializes")
}

pub fn write_snapshot(path: &Path, snapshot: &GraphSnapshot) -> Result<(), LogError> {
    std::fs::write(path, snapshot_json(snapshot)).map_err(io_err(path))
}

pub fn read_snapshot(path: &Path) -> Result<GraphSnapshot, LogError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| LogError::Snapshot(e.to_string()))
}
