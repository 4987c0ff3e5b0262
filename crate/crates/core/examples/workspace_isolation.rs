//! Capability tokens and per-role partitions in the round workspace.

use std::collections::BTreeSet;

use serde_json::json;
use warroom::model::{ArtifactKind, PartitionId, RoleId, Stage, Upstream};
use warroom::workspace::{Grant, MissionId, TokenIssuer, Workspace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut issuer = TokenIssuer::new(MissionId(1));
    let ws = Workspace::new(MissionId(1), 1, BTreeSet::new());
    let ctrl = issuer.issue(RoleId::Controller, Grant::WriteOwnPartition);
    let detective = issuer.issue(RoleId::Detective, Grant::WriteOwnPartition);
    let strategist = issuer.issue(RoleId::Strategist, Grant::WriteOwnPartition);
    let validator = issuer.issue(RoleId::Validator, Grant::ReadAll);
    ws.attest_stage(&ctrl, Stage::S2)?;

    let ev = ws.add_artifact(&detective, ArtifactKind::Evidence, json!({ "command": "file ./target" }), vec![])?;
    println!("detective wrote {} into D", ev.id());
    let denied = ws.write(&detective, PartitionId::Strategist, ArtifactKind::Hypothesis, json!({}), vec![]);
    println!("detective -> S: {}", denied.unwrap_err());
    let denied = ws.write(&validator, PartitionId::Detective, ArtifactKind::Evidence, json!({}), vec![]);
    println!("validator -> D: {}", denied.unwrap_err());
    let other = TokenIssuer::new(MissionId(2)).issue(RoleId::Detective, Grant::WriteOwnPartition);
    println!("foreign mission token: {}", ws.add_artifact(&other, ArtifactKind::Evidence, json!({}), vec![]).unwrap_err());

    println!("strategist reads D in S2: {:?}", ws.read_partition(&strategist, PartitionId::Detective).map(|v| v.len()));
    ws.attest_stage(&ctrl, Stage::S3)?;
    println!("strategist reads D in S3: {:?}", ws.read_partition(&strategist, PartitionId::Detective).map(|v| v.len()));
    let h = ws.add_artifact(&strategist, ArtifactKind::Hypothesis, json!({ "id": "h" }), vec![Upstream::Artifact(ev.id())])?;
    println!("strategist wrote {} citing {}", h.id(), ev.id());

    let sealed = ws.seal(&ctrl)?;
    println!("sealed: {sealed:?}");
    println!("write after seal: {}", ws.add_artifact(&detective, ArtifactKind::Evidence, json!({}), vec![]).unwrap_err());
    println!("validator sees {} artifacts", ws.read_all(&validator)?.len());
    Ok(())
}
