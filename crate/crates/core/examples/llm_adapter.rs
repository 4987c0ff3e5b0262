//! A full mission driven by completion-client backends. The stub client
//! replays canned JSON replies; a networked client would implement the same
//! trait.

use warroom::adapter::{LlmBackend, StubClient};
use warroom::controller::{run_mission, MissionConfig, MissionLog, RoleSet};
use warroom::knowledge::KnowledgeBase;
use warroom::model::RoleId;
use warroom::sim::{CommandSpec, EnvSpec, ScriptedEnvironment};

const HYPOTHESIS: &str = r#"{"artifacts":[{"kind":"HYPOTHESIS","content":{
  "id":"guess-key","nodes":[{"step_index":0,"operator":"target","command":"./target hunter2",
  "expected_signals":["FLAG"],"resource_cost":{"tok":50.0,"time_ms":20.0,"risk":0.02}}]}}]}"#;

fn backend(role: RoleId, replies: &[&str]) -> Box<LlmBackend<StubClient>> {
    let client = StubClient::new(replies.iter().map(|r| StubClient::text(*r, 120, 300)));
    Box::new(LlmBackend::new(role, format!("stub-{role}"), "You are the {role}. Reply with JSON.", client))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cmd = |command: &str, stdout: &str| CommandSpec { command: command.into(), stdout: stdout.into(), ..Default::default() };
    let mut env = ScriptedEnvironment::new(EnvSpec {
        flag: Some("FLAG{stubbed}".into()),
        commands: vec![cmd("strings ./target", "check_key hunter2?"), cmd("./target hunter2", "FLAG{stubbed}")],
        ..Default::default()
    });
    let mut roles = RoleSet {
        detective: backend(RoleId::Detective, &[r#"{"tool_requests":["strings ./target"]}"#]),
        strategist: backend(RoleId::Strategist, &[HYPOTHESIS, r#"{"agree":true}"#]),
        general: backend(RoleId::General, &["{}"]),
        executor: backend(RoleId::Executor(0), &[r#"{"tool_requests":["./target hunter2"]}"#]),
    };
    let config = MissionConfig::default();
    let mut kb = KnowledgeBase::in_memory(config.kb);
    let mut log = MissionLog::in_memory();
    let report = run_mission(&config, &mut env, &mut roles, &mut kb, &mut log)?;
    println!("{} after {} round(s); plan {:?}", report.reason.as_str(), report.rounds, report.round_summaries[0].plan);
    println!("tokens {} cost total {}", report.spent.tokens, report.cost_total);
    println!("knowledge entries after the mission: {}", kb.len());
    Ok(())
}
