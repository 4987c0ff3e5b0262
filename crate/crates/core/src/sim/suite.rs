//! The scenario suite: expectations, stage conformance, replay audit and
//! byte-level determinism for every document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

use crate::canonical::ContentHash;
use crate::controller::{to_jsonl, LogRecord, MissionReport};
use crate::knowledge::KnowledgeBase;
use crate::replay::replay_records;

use super::experiment::learning_experiment;
use super::scenario::{Scenario, ScenarioError};

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../scenarios/", $name, ".toml")))),*]
    };
}

/// Scenario documents shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = bundled!(
    "fault_backend_timeout",
    "fault_malformed_plan",
    "fault_tool_crash",
    "handshake_exhausted",
    "handshake_revise",
    "infeasible",
    "learning_family",
    "protocol_violations",
    "risk_budget",
    "skip_path",
    "stall",
    "success_first_round",
    "time_budget",
    "token_budget",
    "two_executors",
);

pub const SUITE_CHECKS: [&str; 4] = ["expect", "stages", "replay", "determinism"];

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub origin: String,
    pub source: String,
}

impl SuiteEntry {
    pub fn bundled() -> Vec<SuiteEntry> {
        BUNDLED
            .iter()
            .map(|(n, s)| SuiteEntry { name: (*n).into(), origin: format!("{n}.toml"), source: (*s).into() })
            .collect()
    }

    /// Every `*.toml` in `dir`, sorted by file name.
    pub fn from_dir(dir: &Path) -> Result<Vec<SuiteEntry>, ScenarioError> {
        let io = |source| ScenarioError::Io { path: dir.display().to_string(), source };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|p| {
                let source = std::fs::read_to_string(&p)
                    .map_err(|source| ScenarioError::Io { path: p.display().to_string(), source })?;
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok(SuiteEntry { name, origin: p.display().to_string(), source })
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MissionOutcome {
    pub name: String,
    pub reason: String,
    pub rounds: u64,
    pub log_digest: ContentHash,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteRow {
    pub name: String,
    pub missions: Vec<MissionOutcome>,
    /// Failure detail per check; absent means pass.
    pub checks: BTreeMap<&'static str, Option<String>>,
    pub elapsed_ms: u128,
    #[serde(skip)]
    pub logs: Vec<Vec<LogRecord>>,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.checks.values().all(Option::is_none)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
    pub elapsed_ms: u128,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(SuiteRow::passed)
    }

    pub fn matrix(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(8).max(8);
        let mut out = format!("{:width$}  {}\n", "scenario", SUITE_CHECKS.map(|c| format!("{c:12}")).join(""));
        for r in &self.rows {
            let cells: String = SUITE_CHECKS
                .iter()
                .map(|c| format!("{:12}", if r.checks.get(c).is_some_and(Option::is_some) { "FAIL" } else { "pass" }))
                .collect();
            out.push_str(&format!("{:width$}  {cells}\n", r.name));
            for (c, d) in &r.checks {
                if let Some(d) = d {
                    out.push_str(&format!("    {c}: {d}\n"));
                }
            }
        }
        let passed = self.rows.iter().filter(|r| r.passed()).count();
        out.push_str(&format!("{passed}/{} scenarios passed in {} ms\n", self.rows.len(), self.elapsed_ms));
        out
    }
}

/// Runs every mission of a family in sequence over one persisted store.
fn run_missions(missions: &[Scenario]) -> Result<(Vec<MissionReport>, Vec<Vec<LogRecord>>), ScenarioError> {
    let mut kb = KnowledgeBase::in_memory(missions.first().map(|s| s.config.kb).unwrap_or_default());
    let mut reports = Vec::new();
    let mut logs = Vec::new();
    for m in missions {
        let run = m.run(Some(&mut kb))?;
        reports.push(run.report);
        logs.push(run.log);
    }
    Ok((reports, logs))
}

fn check_expectations(missions: &[Scenario], reports: &[MissionReport]) -> Result<Option<String>, ScenarioError> {
    let mut bad: Vec<String> = missions
        .iter()
        .zip(reports)
        .flat_map(|(m, r)| m.check(r).into_iter().map(move |b| format!("{}: {b}", m.name)))
        .collect();
    let expect = &missions[0].expect;
    for (want, persist) in [(&expect.persisted, true), (&expect.cleared, false)] {
        if let Some(want) = want {
            let got = learning_experiment(missions, want.len(), persist)?;
            if &got != want {
                bad.push(format!("rounds-to-success with persist={persist}: {got:?} != {want:?}"));
            }
        }
    }
    Ok((!bad.is_empty()).then(|| bad.join("; ")))
}

pub fn run_entry(entry: &SuiteEntry) -> SuiteRow {
    let start = Instant::now();
    let mut row = SuiteRow { name: entry.name.clone(), missions: Vec::new(), checks: BTreeMap::new(), elapsed_ms: 0, logs: Vec::new() };
    let result = (|| -> Result<(), ScenarioError> {
        let missions = Scenario::parse_family(&entry.source, &entry.origin)?;
        let (reports, logs) = run_missions(&missions)?;
        row.checks.insert("expect", check_expectations(&missions, &reports)?);
        let mut stage_err = None;
        let mut replay_err = None;
        for (m, log) in missions.iter().zip(&logs) {
            let r = replay_records(log);
            if let Some(f) = r.check("stages").and_then(|c| c.failure.as_ref()) {
                stage_err.get_or_insert(format!("{}: record {}: {}", m.name, f.index, f.reason));
            }
            if let Some(c) = r.checks.iter().find(|c| !c.passed()) {
                let f = c.failure.as_ref().expect("failed check has a failure");
                replay_err.get_or_insert(format!("{}: {} at record {}: {}", m.name, c.name, f.index, f.reason));
            }
        }
        row.checks.insert("stages", stage_err);
        row.checks.insert("replay", replay_err);
        let (_, again) = run_missions(&missions)?;
        let same = logs.iter().zip(&again).all(|(a, b)| to_jsonl(a) == to_jsonl(b));
        row.checks.insert("determinism", (!same).then(|| "second run produced different log bytes".into()));
        row.missions = missions
            .iter()
            .zip(&reports)
            .map(|(m, r)| MissionOutcome {
                name: m.name.clone(),
                reason: r.reason.as_str().into(),
                rounds: r.rounds,
                log_digest: r.log_digest,
            })
            .collect();
        row.logs = logs;
        Ok(())
    })();
    if let Err(e) = result {
        for c in SUITE_CHECKS {
            row.checks.entry(c).or_insert_with(|| Some(format!("not run: {e}")));
        }
    }
    row.elapsed_ms = start.elapsed().as_millis();
    row
}

/// Runs entries on up to `jobs` threads; rows keep the input order.
pub fn run_suite(entries: &[SuiteEntry], jobs: usize) -> SuiteReport {
    let start = Instant::now();
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<SuiteRow>>> = Mutex::new(vec![None; entries.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, entries.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(e) = entries.get(i) else { break };
                let row = run_entry(e);
                rows.lock().expect("suite rows")[i] = Some(row);
            });
        }
    });
    let rows = rows.into_inner().expect("suite rows").into_iter().map(|r| r.expect("every entry ran")).collect();
    SuiteReport { rows, elapsed_ms: start.elapsed().as_millis() }
}
