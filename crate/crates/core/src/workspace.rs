//! Per-round transient workspace with role-partitioned writes.
//!
//! Every write carries a [`CapabilityToken`]; the workspace places the
//! artifact in the partition of the token holder, never in one chosen by the
//! caller. Reads are snapshot copies gated by the stage the controller has
//! attested. Once sealed, the workspace rejects all writes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{ContentHash, SerializationError};
use crate::model::{Artifact, ArtifactId, ArtifactKind, PartitionId, Provenance, RoleId, Stage, Upstream};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct MissionId(pub u64);

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Grant {
    WriteOwnPartition,
    ReadAll,
    ValidatorWriteKb,
}

/// Authorization value issued by the controller.
///
/// Fields are private and the only constructor is [`TokenIssuer::issue`], so
/// grants cannot be widened after issuance.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CapabilityToken {
    holder: RoleId,
    grant: Grant,
    mission: MissionId,
    nonce: u64,
}

impl CapabilityToken {
    pub fn holder(&self) -> RoleId {
        self.holder
    }
    pub fn grant(&self) -> Grant {
        self.grant
    }
    pub fn mission(&self) -> MissionId {
        self.mission
    }
    pub fn nonce(&self) -> u64 {
        self.nonce
    }
}

/// Mints tokens for one mission.
#[derive(Debug)]
pub struct TokenIssuer {
    mission: MissionId,
    next_nonce: u64,
}

impl TokenIssuer {
    pub fn new(mission: MissionId) -> Self {
        TokenIssuer { mission, next_nonce: 1 }
    }

    pub fn mission(&self) -> MissionId {
        self.mission
    }

    pub fn issue(&mut self, holder: RoleId, grant: Grant) -> CapabilityToken {
        let nonce = self.next_nonce;
        self.next_nonce += 1;
        CapabilityToken { holder, grant, mission: self.mission, nonce }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkspaceError {
    #[error("write denied: {0}")]
    WriteDenied(String),
    #[error("read denied: {0}")]
    ReadDenied(String),
    #[error("upstream {0:?} does not resolve in this round's workspace or knowledge snapshot")]
    UnknownUpstream(Upstream),
    #[error("workspace for round {0} is sealed")]
    Sealed(u64),
    #[error("workspace for round {0} is already sealed")]
    AlreadySealed(u64),
    #[error(transparent)]
    Serialization(#[from] SerializationError),
}

/// Per-partition artifact counts reported at seal time.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct SealSummary {
    #[serde(rename = "D")]
    pub detective: usize,
    #[serde(rename = "S")]
    pub strategist: usize,
    #[serde(rename = "G")]
    pub general: usize,
    #[serde(rename = "E")]
    pub executor: usize,
    #[serde(rename = "ctrl")]
    pub controller: usize,
}

#[derive(Debug, Default)]
struct Inner {
    partitions: BTreeMap<PartitionId, Vec<Artifact>>,
    // commit order across partitions
    order: Vec<(PartitionId, usize)>,
    index: BTreeMap<ArtifactId, (PartitionId, usize)>,
    next_seq: u64,
    stage: Option<Stage>,
    sealed: bool,
}

/// Transient store for one round.
#[derive(Debug)]
pub struct Workspace {
    mission: MissionId,
    round: u64,
    knowledge: BTreeSet<ContentHash>,
    inner: RwLock<Inner>,
}

/// Which partitions a role may read during a stage, beyond its own.
fn stage_reads(stage: Stage, reader: RoleId) -> &'static [PartitionId] {
    use PartitionId::*;
    match (stage, reader) {
        (Stage::S3, RoleId::Strategist) => &[Detective],
        (Stage::S4, RoleId::Strategist) => &[Detective, General],
        (Stage::S4, RoleId::General) => &[Strategist],
        (Stage::S5, RoleId::Executor(_)) => &[General],
        _ => &[],
    }
}

impl Workspace {
    /// `knowledge` holds the provenance hashes visible in the round's
    /// knowledge snapshot; upstream links may point at those.
    pub fn new(mission: MissionId, round: u64, knowledge: BTreeSet<ContentHash>) -> Self {
        Workspace { mission, round, knowledge, inner: RwLock::new(Inner::default()) }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn is_sealed(&self) -> bool {
        self.inner.read().expect("workspace lock").sealed
    }

    pub fn stage(&self) -> Option<Stage> {
        self.inner.read().expect("workspace lock").stage
    }

    /// Controller records the stage that gates reads.
    pub fn attest_stage(&self, token: &CapabilityToken, stage: Stage) -> Result<(), WorkspaceError> {
        self.check_controller(token).map_err(WorkspaceError::WriteDenied)?;
        self.inner.write().expect("workspace lock").stage = Some(stage);
        Ok(())
    }

    fn check_controller(&self, token: &CapabilityToken) -> Result<(), String> {
        if token.mission != self.mission {
            return Err(format!("token for {:?} used in {:?}", token.mission, self.mission));
        }
        if token.holder != RoleId::Controller {
            return Err(format!("{} is not the controller", token.holder));
        }
        Ok(())
    }

    /// Appends an artifact to the token holder's partition.
    pub fn add_artifact(
        &self,
        token: &CapabilityToken,
        kind: ArtifactKind,
        content: Value,
        upstream: Vec<Upstream>,
    ) -> Result<Artifact, WorkspaceError> {
        let target = token
            .holder
            .partition()
            .ok_or_else(|| WorkspaceError::WriteDenied(format!("{} owns no partition", token.holder)))?;
        self.write(token, target, kind, content, upstream)
    }

    /// Appends to an explicitly named partition; rejected unless it is the
    /// token holder's own.
    pub fn write(
        &self,
        token: &CapabilityToken,
        target: PartitionId,
        kind: ArtifactKind,
        content: Value,
        upstream: Vec<Upstream>,
    ) -> Result<Artifact, WorkspaceError> {
        if token.mission != self.mission {
            return Err(WorkspaceError::WriteDenied(format!(
                "token minted for {:?}, workspace belongs to {:?}",
                token.mission, self.mission
            )));
        }
        if token.grant != Grant::WriteOwnPartition {
            return Err(WorkspaceError::WriteDenied(format!(
                "{} holds {:?}, not WRITE_OWN_PARTITION",
                token.holder, token.grant
            )));
        }
        if token.holder.partition() != Some(target) {
            return Err(WorkspaceError::WriteDenied(format!(
                "{} may not write partition {target:?}",
                token.holder
            )));
        }
        let mut inner = self.inner.write().expect("workspace lock");
        if inner.sealed {
            return Err(WorkspaceError::Sealed(self.round));
        }
        for up in &upstream {
            let ok = match up {
                Upstream::Artifact(id) => inner.index.contains_key(id),
                Upstream::Knowledge(h) => self.knowledge.contains(h),
            };
            if !ok {
                return Err(WorkspaceError::UnknownUpstream(*up));
            }
        }
        if token.holder.canonical_output() != Some(kind) {
            tracing::warn!(role = %token.holder, ?kind, "artifact kind deviates from the role's usual output");
        }
        let id = ArtifactId::scoped(self.round, inner.next_seq);
        let prov = Provenance { producer: token.holder, upstream };
        let artifact = Artifact::new(id, kind, content, prov)?;
        inner.next_seq += 1;
        let part = inner.partitions.entry(target).or_default();
        part.push(artifact.clone());
        let pos = part.len() - 1;
        inner.order.push((target, pos));
        inner.index.insert(id, (target, pos));
        Ok(artifact)
    }

    /// Snapshot copy of one partition.
    pub fn read_partition(
        &self,
        token: &CapabilityToken,
        partition: PartitionId,
    ) -> Result<Vec<Artifact>, WorkspaceError> {
        if token.mission != self.mission {
            return Err(WorkspaceError::ReadDenied("token from another mission".into()));
        }
        let inner = self.inner.read().expect("workspace lock");
        let allowed = token.grant == Grant::ReadAll
            || token.holder == RoleId::Controller
            || token.holder.partition() == Some(partition)
            || inner.stage.is_some_and(|s| stage_reads(s, token.holder).contains(&partition));
        if !allowed {
            return Err(WorkspaceError::ReadDenied(format!(
                "{} may not read {partition:?} during {}",
                token.holder,
                inner.stage.map(|s| s.to_string()).unwrap_or_else(|| "no stage".into())
            )));
        }
        Ok(inner.partitions.get(&partition).cloned().unwrap_or_default())
    }

    /// Every artifact in commit order. Requires a read-all or controller token.
    pub fn read_all(&self, token: &CapabilityToken) -> Result<Vec<Artifact>, WorkspaceError> {
        if token.mission != self.mission
            || !(token.grant == Grant::ReadAll || token.holder == RoleId::Controller)
        {
            return Err(WorkspaceError::ReadDenied(format!("{} lacks READ_ALL", token.holder)));
        }
        let inner = self.inner.read().expect("workspace lock");
        Ok(inner.order.iter().map(|(p, i)| inner.partitions[p][*i].clone()).collect())
    }

    pub fn contains(&self, id: ArtifactId) -> bool {
        self.inner.read().expect("workspace lock").index.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("workspace lock").order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Makes the workspace immutable and reports per-partition counts.
    pub fn seal(&self, controller: &CapabilityToken) -> Result<SealSummary, WorkspaceError> {
        self.check_controller(controller).map_err(WorkspaceError::WriteDenied)?;
        let mut inner = self.inner.write().expect("workspace lock");
        if inner.sealed {
            return Err(WorkspaceError::AlreadySealed(self.round));
        }
        inner.sealed = true;
        let count = |p| inner.partitions.get(&p).map_or(0, Vec::len);
        Ok(SealSummary {
            detective: count(PartitionId::Detective),
            strategist: count(PartitionId::Strategist),
            general: count(PartitionId::General),
            executor: count(PartitionId::Executor),
            controller: count(PartitionId::Controller),
        })
    }
}
