//! Multi-mission drivers: the learning curve and the SKIP path.

use serde::Serialize;

use crate::controller::{LogRecord, MissionReport, TerminationReason};
use crate::knowledge::KnowledgeBase;
use crate::model::ArtifactKind;
use crate::validator::STATUS_SKIP;

use super::scenario::{Scenario, ScenarioError};

pub const LEARNING_FAMILY: &str = include_str!("../../scenarios/learning_family.toml");
pub const SKIP_PATH: &str = include_str!("../../scenarios/skip_path.toml");

/// Rounds-to-success per mission; a mission that ends another way counts
/// all of its rounds.
pub fn learning_experiment(family: &[Scenario], missions: usize, persist_kb: bool) -> Result<Vec<u64>, ScenarioError> {
    let Some(first) = family.first() else { return Ok(Vec::new()) };
    let mut kb = KnowledgeBase::in_memory(first.config.kb);
    let mut curve = Vec::with_capacity(missions);
    for scenario in family.iter().cycle().take(missions) {
        if !persist_kb {
            kb = KnowledgeBase::in_memory(scenario.config.kb);
        }
        let run = scenario.run(Some(&mut kb))?;
        tracing::info!(mission = %scenario.name, rounds = run.report.rounds, reason = run.report.reason.as_str(), "mission done");
        curve.push(run.report.rounds);
    }
    Ok(curve)
}

/// The bundled pattern family, persisted and cleared.
pub fn bundled_learning_curves() -> Result<(Vec<u64>, Vec<u64>), ScenarioError> {
    let fam = Scenario::parse_family(LEARNING_FAMILY, "learning_family.toml")?;
    Ok((learning_experiment(&fam, fam.len(), true)?, learning_experiment(&fam, fam.len(), false)?))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum ToolState {
    /// Missing and installation not permitted.
    Unavailable,
    Available,
    /// Missing, but installable and installation permitted.
    Installable,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct SkipPathReport {
    pub reason: TerminationReason,
    /// Source hypothesis committed in each round.
    pub plans: Vec<Option<String>>,
    /// Rounds containing at least one SKIP trace.
    pub skip_rounds: Vec<u64>,
    /// Executor trace commands in log order.
    pub trace_commands: Vec<String>,
}

pub fn skip_path_scenario(state: ToolState) -> Result<Scenario, ScenarioError> {
    let mut s = Scenario::parse(SKIP_PATH, "skip_path.toml")?;
    match state {
        ToolState::Unavailable => {}
        ToolState::Available => s.env.unavailable.clear(),
        ToolState::Installable => {
            s.env.installable = s.env.unavailable.clone();
            s.config.allow_install = true;
        }
    }
    Ok(s)
}

pub fn skip_path_report(report: &MissionReport, log: &[LogRecord]) -> SkipPathReport {
    let mut skip_rounds = Vec::new();
    let mut trace_commands = Vec::new();
    for rec in log {
        let LogRecord::Artifact { round, artifact, .. } = rec else { continue };
        if artifact.kind() != ArtifactKind::Trace || !artifact.producer().is_executor() {
            continue;
        }
        let c = artifact.content();
        if c.get("status").and_then(|v| v.as_str()) == Some(STATUS_SKIP) && skip_rounds.last() != Some(round) {
            skip_rounds.push(*round);
        }
        if let Some(cmd) = c.get("command").and_then(|v| v.as_str()) {
            trace_commands.push(cmd.to_owned());
        }
    }
    SkipPathReport {
        reason: report.reason,
        plans: report.round_summaries.iter().map(|r| r.plan.clone()).collect(),
        skip_rounds,
        trace_commands,
    }
}

/// Two hypotheses; the cheaper one needs a tool the sandbox lacks.
pub fn skip_path_experiment(state: ToolState) -> Result<SkipPathReport, ScenarioError> {
    let run = skip_path_scenario(state)?.run(None)?;
    Ok(skip_path_report(&run.report, &run.log))
}
