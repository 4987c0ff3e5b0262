//! JSON-lines mission log.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::canonical::ContentHash;
use crate::model::{Artifact, EntryId, EntryKind, KnowledgeEntry, Outcome, PartitionId, RoleId, Stage};
use crate::validator::AuditRow;
use crate::workspace::SealSummary;

use super::cost::{CostLedger, Spent};
use super::fault::FaultInfo;
use super::message::Message;
use super::{MissionConfig, TerminationReason};

pub const LOG_FORMAT: &str = "warroom-log/1";

/// Entry summary as it appears in snapshots and commits.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct EntryRef {
    pub id: EntryId,
    pub kind: EntryKind,
    pub score: f64,
    pub prov_hash: ContentHash,
}

impl From<&KnowledgeEntry> for EntryRef {
    fn from(e: &KnowledgeEntry) -> Self {
        EntryRef { id: e.id, kind: e.kind(), score: e.score, prov_hash: e.prov_hash }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Refreshed {
    pub id: EntryId,
    pub score: f64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LogRecord {
    Header {
        format: String,
        hash_function: String,
        seed: u64,
        config: MissionConfig,
        kb_initial: Vec<EntryRef>,
    },
    Stage {
        round: u64,
        stage: Stage,
        clock_ms: u64,
    },
    Snapshot {
        round: u64,
        kb_clock: u64,
        entries: Vec<EntryRef>,
    },
    Message {
        round: u64,
        message: Message,
    },
    Artifact {
        round: u64,
        partition: PartitionId,
        artifact: Artifact,
    },
    Fault {
        round: u64,
        fault: FaultInfo,
    },
    /// A backend request the controller refused; the round continues.
    Rejected {
        round: u64,
        stage: Stage,
        role: RoleId,
        code: String,
        detail: String,
    },
    Audit {
        round: u64,
        row: AuditRow,
    },
    KbCommit {
        round: u64,
        batch: u64,
        accepted: Vec<EntryRef>,
        refreshed: Vec<Refreshed>,
        evicted: Vec<EntryId>,
    },
    Verdict {
        round: u64,
        outcome: Outcome,
        sealed: SealSummary,
        role_scores: BTreeMap<RoleId, f64>,
        promoted: usize,
    },
    Cost {
        round: u64,
        ledger: CostLedger,
        spent: Spent,
    },
    Termination {
        reason: TerminationReason,
        rounds: u64,
        outcome: Outcome,
    },
}

impl LogRecord {
    pub fn type_name(&self) -> &'static str {
        match self {
            LogRecord::Header { .. } => "HEADER",
            LogRecord::Stage { .. } => "STAGE",
            LogRecord::Snapshot { .. } => "SNAPSHOT",
            LogRecord::Message { .. } => "MESSAGE",
            LogRecord::Artifact { .. } => "ARTIFACT",
            LogRecord::Fault { .. } => "FAULT",
            LogRecord::Rejected { .. } => "REJECTED",
            LogRecord::Audit { .. } => "AUDIT",
            LogRecord::KbCommit { .. } => "KB_COMMIT",
            LogRecord::Verdict { .. } => "VERDICT",
            LogRecord::Cost { .. } => "COST",
            LogRecord::Termination { .. } => "TERMINATION",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {index}: {reason}")]
    CorruptLog { index: usize, reason: String },
}

/// Record buffer, flushed to an optional file sink once per round.
#[derive(Default)]
pub struct MissionLog {
    records: Vec<LogRecord>,
    flushed: usize,
    sink: Option<BufWriter<File>>,
}

impl MissionLog {
    pub fn in_memory() -> Self {
        MissionLog::default()
    }

    pub fn to_file(path: &Path) -> Result<Self, LogError> {
        Ok(MissionLog { sink: Some(BufWriter::new(File::create(path)?)), ..Default::default() })
    }

    pub fn push(&mut self, rec: LogRecord) {
        tracing::trace!(record = rec.type_name(), "log");
        self.records.push(rec);
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        if let Some(w) = &mut self.sink {
            for r in &self.records[self.flushed..] {
                w.write_all(&line(r))?;
            }
            w.flush()?;
        }
        self.flushed = self.records.len();
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<LogRecord> {
        self.records
    }
}

fn line(r: &LogRecord) -> Vec<u8> {
    let mut v = serde_json::to_vec(r).expect("log records encode");
    v.push(b'\n');
    v
}

/// The exact bytes a file sink would hold.
pub fn to_jsonl(records: &[LogRecord]) -> Vec<u8> {
    records.iter().flat_map(line).collect()
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<(), LogError> {
    std::fs::write(path, to_jsonl(records))?;
    Ok(())
}

/// Parses a JSON-lines log; the error names the first unreadable line.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, LogError> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (index, l) in f.lines().enumerate() {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&l).map_err(|e| LogError::CorruptLog { index, reason: e.to_string() })?,
        );
    }
    Ok(out)
}
