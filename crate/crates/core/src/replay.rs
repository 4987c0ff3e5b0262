//! Offline audit of a mission log: hashes, stage order, message legality,
//! validator gating and the cost identity.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::canonical::ContentHash;
use crate::controller::{read_log, LogError, LogRecord, MissionConfig, LOG_FORMAT};
use crate::model::{verify_artifact, ArtifactId, ArtifactKind, EntryId, Stage, Upstream};

pub const CHECKS: [&str; 5] = ["hashes", "stages", "messages", "gating", "cost"];

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct Failure {
    /// Zero-based record index.
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub failure: Option<Failure>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct ReplayReport {
    pub records: usize,
    pub checks: Vec<Check>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = format!("{} records\n", self.records);
        for c in &self.checks {
            match &c.failure {
                None => out.push_str(&format!("PASS {}\n", c.name)),
                Some(f) => out.push_str(&format!("FAIL {} at record {}: {}\n", c.name, f.index, f.reason)),
            }
        }
        out
    }
}

type Verdict = Result<(), Failure>;

fn fail<T>(index: usize, reason: impl Into<String>) -> Result<T, Failure> {
    Err(Failure { index, reason: reason.into() })
}

fn header(records: &[LogRecord]) -> Result<&MissionConfig, Failure> {
    match records.first() {
        Some(LogRecord::Header { format, config, .. }) if format == LOG_FORMAT => Ok(config),
        Some(LogRecord::Header { format, .. }) => fail(0, format!("unknown log format {format}")),
        _ => fail(0, "log does not start with a HEADER"),
    }
}

fn check_hashes(records: &[LogRecord]) -> Verdict {
    for (i, r) in records.iter().enumerate() {
        match r {
            LogRecord::Artifact { artifact, .. } if !verify_artifact(artifact) => {
                return fail(i, format!("artifact {} hash mismatch", artifact.id()));
            }
            LogRecord::Message { message, .. } if !message.verify() => {
                return fail(i, format!("message {} hash mismatch", message.id));
            }
            _ => {}
        }
    }
    Ok(())
}

const ORDER: [Stage; 6] = [Stage::S1, Stage::S2, Stage::S3, Stage::S4, Stage::S5, Stage::S6];

/// Each round's stages form a prefix of S1..S6, with at most one jump to S6
/// and only after a FAULT record.
fn check_stages(records: &[LogRecord]) -> Verdict {
    let mut round = 0u64;
    let mut seen: Vec<Stage> = Vec::new();
    let mut faulted = false;
    let mut ended = false;
    for (i, r) in records.iter().enumerate() {
        if ended {
            return fail(i, "record after TERMINATION");
        }
        match r {
            LogRecord::Header { .. } if i > 0 => return fail(i, "second HEADER"),
            LogRecord::Header { .. } => {}
            LogRecord::Termination { .. } => ended = true,
            LogRecord::Stage { round: rr, stage, .. } => {
                if *rr != round {
                    if *rr != round + 1 {
                        return fail(i, format!("round {rr} follows round {round}"));
                    }
                    round = *rr;
                    seen.clear();
                    faulted = false;
                }
                let next = ORDER[seen.len().min(5)];
                let jump = *stage == Stage::S6 && seen.len() < 5;
                if seen.len() == 6 || (*stage != next && !jump) {
                    return fail(i, format!("{stage} after {:?} in round {round}", seen));
                }
                if jump && !faulted {
                    return fail(i, format!("jump to S6 in round {round} without a fault"));
                }
                seen.push(*stage);
            }
            other => {
                let rr = record_round(other).expect("non-header records carry a round");
                if rr != round || seen.is_empty() {
                    return fail(i, format!("{} for round {rr} outside that round", other.type_name()));
                }
                if let LogRecord::Fault { .. } = other {
                    if faulted {
                        return fail(i, "second fault in one round");
                    }
                    faulted = true;
                }
            }
        }
    }
    Ok(())
}

fn record_round(r: &LogRecord) -> Option<u64> {
    Some(match r {
        LogRecord::Stage { round, .. }
        | LogRecord::Snapshot { round, .. }
        | LogRecord::Message { round, .. }
        | LogRecord::Artifact { round, .. }
        | LogRecord::Fault { round, .. }
        | LogRecord::Rejected { round, .. }
        | LogRecord::Audit { round, .. }
        | LogRecord::KbCommit { round, .. }
        | LogRecord::Verdict { round, .. }
        | LogRecord::Cost { round, .. } => *round,
        LogRecord::Header { .. } | LogRecord::Termination { .. } => return None,
    })
}

fn check_messages(records: &[LogRecord]) -> Verdict {
    let mut stage = None;
    let mut committed: BTreeSet<ArtifactId> = BTreeSet::new();
    let mut round = 0;
    for (i, r) in records.iter().enumerate() {
        match r {
            LogRecord::Stage { round: rr, stage: s, .. } => {
                if *rr != round {
                    round = *rr;
                    committed.clear();
                }
                stage = Some(*s);
            }
            LogRecord::Artifact { artifact, .. } => {
                committed.insert(artifact.id());
            }
            LogRecord::Message { message, .. } => {
                let Some(s) = stage else { return fail(i, "message before any stage") };
                if !message.kind.legal_in(s) {
                    return fail(i, format!("{:?} is not legal during {s}", message.kind));
                }
                if let Some(r) = message.refs.iter().find(|r| !committed.contains(r)) {
                    return fail(i, format!("message {} references uncommitted {r}", message.id));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Promotion decisions, store commits and knowledge use all trace back to
/// validated, promoted artifacts.
fn check_gating(records: &[LogRecord], cfg: &MissionConfig) -> Verdict {
    let tau = cfg.kb.tau_prom;
    let mut live: BTreeMap<EntryId, ContentHash> = BTreeMap::new();
    if let Some(LogRecord::Header { kb_initial, .. }) = records.first() {
        live.extend(kb_initial.iter().map(|e| (e.id, e.prov_hash)));
    }
    let mut hashes: BTreeMap<ArtifactId, ContentHash> = BTreeMap::new();
    let mut promoted_hashes: BTreeSet<ContentHash> = BTreeSet::new();
    let mut promoted_count = 0usize;
    let mut snapshot: Option<(BTreeSet<EntryId>, BTreeSet<ContentHash>)> = None;
    let mut round = 0;
    for (i, r) in records.iter().enumerate() {
        if let Some(rr) = record_round(r) {
            if rr != round {
                round = rr;
                hashes.clear();
                promoted_hashes.clear();
                promoted_count = 0;
                snapshot = None;
            }
        }
        match r {
            LogRecord::Snapshot { entries, .. } => {
                for e in entries {
                    if live.get(&e.id) != Some(&e.prov_hash) {
                        return fail(i, format!("snapshot entry {} was never committed live", e.id));
                    }
                }
                snapshot = Some((entries.iter().map(|e| e.id).collect(), entries.iter().map(|e| e.prov_hash).collect()));
            }
            LogRecord::Artifact { artifact, .. } => {
                let Some((ids, provs)) = &snapshot else { return fail(i, "artifact before the round snapshot") };
                for u in &artifact.prov().upstream {
                    if let Upstream::Knowledge(h) = u {
                        if !provs.contains(h) {
                            return fail(i, format!("artifact {} cites knowledge {h} outside its snapshot", artifact.id()));
                        }
                    }
                }
                if artifact.kind() == ArtifactKind::Hypothesis {
                    let matched = artifact
                        .content()
                        .get("nodes")
                        .and_then(|n| n.as_array())
                        .into_iter()
                        .flatten()
                        .filter_map(|n| n.get("matched_patterns").and_then(|m| m.as_array()))
                        .flatten()
                        .filter_map(|v| serde_json::from_value::<EntryId>(v.clone()).ok());
                    for id in matched {
                        if !ids.contains(&id) {
                            return fail(i, format!("hypothesis {} matches {id} outside its snapshot", artifact.id()));
                        }
                    }
                }
                hashes.insert(artifact.id(), artifact.hash());
            }
            LogRecord::Audit { row, .. } => {
                let s = cfg.scoring.combine(row.rep, row.con, row.util);
                if s != row.s {
                    return fail(i, format!("audit of {} records s={} but the weights give {s}", row.artifact, row.s));
                }
                if row.promoted != (row.s >= tau) {
                    return fail(i, format!("audit of {} promoted={} with s={} and threshold {tau}", row.artifact, row.promoted, row.s));
                }
                let Some(h) = hashes.get(&row.artifact) else {
                    return fail(i, format!("audit of unknown artifact {}", row.artifact));
                };
                if row.promoted {
                    promoted_hashes.insert(*h);
                    promoted_count += 1;
                }
            }
            LogRecord::KbCommit { accepted, refreshed, evicted, .. } => {
                for e in accepted {
                    if e.score < tau {
                        return fail(i, format!("entry {} committed with score {} below {tau}", e.id, e.score));
                    }
                    if !promoted_hashes.contains(&e.prov_hash) {
                        return fail(i, format!("entry {} has no promoted source artifact this round", e.id));
                    }
                    live.insert(e.id, e.prov_hash);
                }
                for e in refreshed {
                    if e.score < tau || !live.contains_key(&e.id) {
                        return fail(i, format!("refresh of {} is not a live entry above threshold", e.id));
                    }
                }
                for id in evicted {
                    if live.remove(id).is_none() {
                        return fail(i, format!("eviction of {id}, which is not live"));
                    }
                }
            }
            LogRecord::Verdict { promoted, .. } if *promoted != promoted_count => {
                return fail(i, format!("verdict claims {promoted} promotions, audit shows {promoted_count}"));
            }
            _ => {}
        }
    }
    Ok(())
}

fn check_cost(records: &[LogRecord]) -> Verdict {
    for (i, r) in records.iter().enumerate() {
        if let LogRecord::Cost { ledger, .. } = r {
            if ledger.total != ledger.recompute() {
                return fail(i, format!("ledger total {} != recomputed {}", ledger.total, ledger.recompute()));
            }
            if ledger.handshake_tokens > ledger.handshake_bound() {
                return fail(i, format!("handshake used {} over bound {}", ledger.handshake_tokens, ledger.handshake_bound()));
            }
        }
    }
    Ok(())
}

pub fn replay_records(records: &[LogRecord]) -> ReplayReport {
    let cfg = header(records);
    let gating = match &cfg {
        Ok(c) => check_gating(records, c),
        Err(f) => Err(f.clone()),
    };
    let results = [
        cfg.as_ref().map(|_| ()).map_err(Clone::clone).and_then(|()| check_hashes(records)),
        check_stages(records),
        check_messages(records),
        gating,
        check_cost(records),
    ];
    let checks = CHECKS.iter().zip(results).map(|(name, r)| Check { name, failure: r.err() }).collect();
    ReplayReport { records: records.len(), checks }
}

/// Reads and audits a log file; unparsable lines surface as `CorruptLog`.
pub fn replay_file(path: &Path) -> Result<ReplayReport, LogError> {
    Ok(replay_records(&read_log(path)?))
}
