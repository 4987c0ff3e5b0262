//! Declarative scenario documents: `[config]`, `[env]`, `[backends]`,
//! `[[faults]]`, `[expect]` and an optional `[family]`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{
    run_mission, ControllerError, LogRecord, MissionConfig, MissionLog, MissionReport, RoleSet, TerminationReason,
};
use crate::knowledge::KnowledgeBase;
use crate::model::RoleId;

use super::backend::{FaultInjection, RoleScript, ScriptedBackend};
use super::env::{EnvSpec, ScriptedEnvironment};

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSpecs {
    pub detective: RoleScript,
    pub strategist: RoleScript,
    pub general: RoleScript,
    pub executor: RoleScript,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectation {
    pub reason: Option<TerminationReason>,
    pub rounds: Option<u64>,
    /// Source hypothesis of the committed plan per round; "-" for none.
    pub plans: Option<Vec<String>>,
    /// Faults in round order, as `KIND@STAGE`.
    pub faults: Option<Vec<String>>,
    /// Rejection and plan-selection codes that must each occur.
    pub errors: Vec<String>,
    /// Rounds-to-success per family mission with the store kept.
    pub persisted: Option<Vec<u64>>,
    /// Rounds-to-success per family mission with a fresh store each time.
    pub cleared: Option<Vec<u64>>,
}

/// Per-mission literal substitutions: `{{KEY}}` takes `values[i]` in mission i.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Family {
    pub missions: usize,
    pub substitute: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub config: MissionConfig,
    pub env: EnvSpec,
    pub backends: BackendSpecs,
    pub faults: Vec<FaultInjection>,
    pub expect: Expectation,
    pub family: Option<Family>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("family: {0}")]
    Family(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// A finished scenario run.
pub struct Run {
    pub report: MissionReport,
    pub log: Vec<LogRecord>,
}

fn substitute(src: &str, fam: &Family, i: usize) -> Result<String, ScenarioError> {
    let mut out = src.to_owned();
    for (key, values) in &fam.substitute {
        let v = values
            .get(i)
            .ok_or_else(|| ScenarioError::Family(format!("{key} has {} values for {} missions", values.len(), fam.missions)))?;
        out = out.replace(&format!("{{{{{key}}}}}"), v);
    }
    Ok(out)
}

impl Scenario {
    pub fn parse(src: &str, origin: &str) -> Result<Self, ScenarioError> {
        toml::from_str(src).map_err(|e| ScenarioError::Parse { path: origin.into(), message: e.to_string() })
    }

    /// Parses a document and expands its family; a plain scenario yields one
    /// mission.
    pub fn parse_family(src: &str, origin: &str) -> Result<Vec<Self>, ScenarioError> {
        let head = Self::parse(src, origin)?;
        let Some(fam) = head.family.clone() else { return Ok(vec![head]) };
        (0..fam.missions.max(1))
            .map(|i| {
                let mut s = Self::parse(&substitute(src, &fam, i)?, origin)?;
                s.name = format!("{}#{}", head.name, i + 1);
                Ok(s)
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Vec<Self>, ScenarioError> {
        let origin = path.display().to_string();
        let src = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: origin.clone(), source })?;
        Self::parse_family(&src, &origin)
    }

    pub fn roles(&self) -> RoleSet {
        let b = |role, script: &RoleScript| -> Box<dyn crate::adapter::RoleBackend> {
            Box::new(ScriptedBackend::new(role, script.clone(), self.faults.clone()))
        };
        RoleSet {
            detective: b(RoleId::Detective, &self.backends.detective),
            strategist: b(RoleId::Strategist, &self.backends.strategist),
            general: b(RoleId::General, &self.backends.general),
            executor: b(RoleId::Executor(0), &self.backends.executor),
        }
    }

    pub fn environment(&self) -> ScriptedEnvironment {
        ScriptedEnvironment::new(self.env.clone())
    }

    /// Runs against `kb`, or a fresh in-memory store.
    pub fn run(&self, kb: Option<&mut KnowledgeBase>) -> Result<Run, ScenarioError> {
        let mut fresh;
        let kb = match kb {
            Some(kb) => kb,
            None => {
                fresh = KnowledgeBase::in_memory(self.config.kb);
                &mut fresh
            }
        };
        let mut log = MissionLog::in_memory();
        self.run_with(kb, &mut log)
            .map(|report| Run { report, log: log.into_records() })
    }

    pub fn run_with(&self, kb: &mut KnowledgeBase, log: &mut MissionLog) -> Result<MissionReport, ScenarioError> {
        let mut env = self.environment();
        let mut roles = self.roles();
        Ok(run_mission(&self.config, &mut env, &mut roles, kb, log)?)
    }

    /// Expectation mismatches for a single-mission report.
    pub fn check(&self, report: &MissionReport) -> Vec<String> {
        let mut bad = Vec::new();
        if let Some(r) = self.expect.reason {
            if r != report.reason {
                bad.push(format!("reason {} != expected {}", report.reason.as_str(), r.as_str()));
            }
        }
        if let Some(n) = self.expect.rounds {
            if n != report.rounds {
                bad.push(format!("rounds {} != expected {n}", report.rounds));
            }
        }
        if let Some(plans) = &self.expect.plans {
            let got: Vec<String> =
                report.round_summaries.iter().map(|r| r.plan.clone().unwrap_or_else(|| "-".into())).collect();
            if &got != plans {
                bad.push(format!("plans {got:?} != expected {plans:?}"));
            }
        }
        if let Some(want) = &self.expect.faults {
            let got = fault_labels(report);
            if &got != want {
                bad.push(format!("faults {got:?} != expected {want:?}"));
            }
        }
        let seen = error_codes(report);
        for code in &self.expect.errors {
            if !seen.contains(code) {
                bad.push(format!("expected error {code} never occurred (saw {seen:?})"));
            }
        }
        bad
    }
}

pub fn fault_labels(report: &MissionReport) -> Vec<String> {
    report
        .round_summaries
        .iter()
        .filter_map(|r| r.fault.as_ref())
        .map(|f| format!("{}@{}", f.kind.as_str(), f.stage))
        .collect()
}

/// Rejection and plan-selection codes over all rounds.
pub fn error_codes(report: &MissionReport) -> std::collections::BTreeSet<String> {
    report
        .round_summaries
        .iter()
        .flat_map(|r| r.rejected.iter().cloned().chain(r.plan_error.clone()))
        .collect()
}
