//! Shared domain types: identifiers, roles, artifacts, knowledge entries and
//! budgets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::canonical::{ContentHash, SerializationError};

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub u128);

        impl $name {
            /// Id scoped to `round`, `seq`-th issued within it.
            pub const fn scoped(round: u64, seq: u64) -> Self {
                $name(((round as u128) << 64) | seq as u128)
            }

            pub const fn round(self) -> u64 {
                (self.0 >> 64) as u64
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{:032x}"), self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}.{}"), self.round(), self.0 as u64)
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let hex = s
                    .strip_prefix($prefix)
                    .ok_or_else(|| format!("expected {} prefix in {s:?}", $prefix))?;
                u128::from_str_radix(hex, 16).map($name).map_err(|e| e.to_string())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

id_type!(ArtifactId, "a-");
id_type!(EntryId, "k-");
id_type!(MessageId, "m-");

/// Role operators plus the controller.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RoleId {
    Detective,
    Strategist,
    General,
    Executor(u32),
    Validator,
    Controller,
}

impl RoleId {
    /// Workspace partition this role writes into, if any.
    pub fn partition(self) -> Option<PartitionId> {
        match self {
            RoleId::Detective => Some(PartitionId::Detective),
            RoleId::Strategist => Some(PartitionId::Strategist),
            RoleId::General => Some(PartitionId::General),
            RoleId::Executor(_) => Some(PartitionId::Executor),
            RoleId::Controller => Some(PartitionId::Controller),
            RoleId::Validator => None,
        }
    }

    /// Artifact kind this role is expected to emit.
    pub fn canonical_output(self) -> Option<ArtifactKind> {
        match self {
            RoleId::Detective => Some(ArtifactKind::Evidence),
            RoleId::Strategist => Some(ArtifactKind::Hypothesis),
            RoleId::General => Some(ArtifactKind::Plan),
            RoleId::Executor(_) => Some(ArtifactKind::Trace),
            RoleId::Controller => Some(ArtifactKind::Trace),
            RoleId::Validator => None,
        }
    }

    pub fn is_executor(self) -> bool {
        matches!(self, RoleId::Executor(_))
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoleId::Detective => f.write_str("detective"),
            RoleId::Strategist => f.write_str("strategist"),
            RoleId::General => f.write_str("general"),
            RoleId::Executor(i) => write!(f, "executor:{i}"),
            RoleId::Validator => f.write_str("validator"),
            RoleId::Controller => f.write_str("ctrl"),
        }
    }
}

impl fmt::Debug for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for RoleId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "detective" | "D" => RoleId::Detective,
            "strategist" | "S" => RoleId::Strategist,
            "general" | "G" => RoleId::General,
            "validator" | "V" => RoleId::Validator,
            "ctrl" | "controller" => RoleId::Controller,
            other => {
                let idx = other
                    .strip_prefix("executor:")
                    .or_else(|| other.strip_prefix('E'))
                    .ok_or_else(|| format!("unknown role {other:?}"))?;
                RoleId::Executor(idx.parse().map_err(|_| format!("bad executor index in {other:?}"))?)
            }
        })
    }
}

impl Serialize for RoleId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RoleId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Write partition of a round workspace.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum PartitionId {
    #[serde(rename = "D")]
    Detective,
    #[serde(rename = "S")]
    Strategist,
    #[serde(rename = "G")]
    General,
    #[serde(rename = "E")]
    Executor,
    #[serde(rename = "ctrl")]
    Controller,
}

impl PartitionId {
    pub const ALL: [PartitionId; 5] = [
        PartitionId::Detective,
        PartitionId::Strategist,
        PartitionId::General,
        PartitionId::Executor,
        PartitionId::Controller,
    ];
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArtifactKind {
    Evidence,
    Hypothesis,
    Plan,
    Trace,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntryKind {
    Pattern,
    Capability,
    Feedback,
}

impl FromStr for EntryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pattern" => Ok(EntryKind::Pattern),
            "capability" => Ok(EntryKind::Capability),
            "feedback" => Ok(EntryKind::Feedback),
            other => Err(format!("unknown entry kind {other:?}")),
        }
    }
}

/// A link from an artifact to something it was derived from.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upstream {
    Artifact(ArtifactId),
    /// A validated knowledge entry, named by its provenance hash.
    Knowledge(ContentHash),
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub producer: RoleId,
    pub upstream: Vec<Upstream>,
}

impl Provenance {
    pub fn upstream_artifacts(&self) -> impl Iterator<Item = ArtifactId> + '_ {
        self.upstream.iter().filter_map(|u| match u {
            Upstream::Artifact(id) => Some(*id),
            Upstream::Knowledge(_) => None,
        })
    }
}

#[derive(Serialize)]
struct HashInput<'a, K: Serialize> {
    kind: K,
    content: &'a Value,
    prov: &'a Provenance,
}

/// Digest over (kind, content, prov).
pub fn canonical_hash<K: Serialize>(
    kind: K,
    content: &Value,
    prov: &Provenance,
) -> Result<ContentHash, SerializationError> {
    ContentHash::of(&HashInput { kind, content, prov })
}

/// Immutable typed workspace record.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Artifact {
    id: ArtifactId,
    kind: ArtifactKind,
    content: Value,
    prov: Provenance,
    hash: ContentHash,
}

impl Artifact {
    pub fn new(
        id: ArtifactId,
        kind: ArtifactKind,
        content: Value,
        prov: Provenance,
    ) -> Result<Self, SerializationError> {
        let hash = canonical_hash(kind, &content, &prov)?;
        Ok(Artifact { id, kind, content, prov, hash })
    }

    /// Rebuilds an artifact from stored fields without recomputing the hash.
    pub fn from_parts(
        id: ArtifactId,
        kind: ArtifactKind,
        content: Value,
        prov: Provenance,
        hash: ContentHash,
    ) -> Self {
        Artifact { id, kind, content, prov, hash }
    }

    pub fn id(&self) -> ArtifactId {
        self.id
    }
    pub fn kind(&self) -> ArtifactKind {
        self.kind
    }
    pub fn content(&self) -> &Value {
        &self.content
    }
    pub fn prov(&self) -> &Provenance {
        &self.prov
    }
    pub fn producer(&self) -> RoleId {
        self.prov.producer
    }
    pub fn hash(&self) -> ContentHash {
        self.hash
    }
}

/// True iff the stored hash matches a recomputation over (kind, content, prov).
pub fn verify_artifact(a: &Artifact) -> bool {
    canonical_hash(a.kind, &a.content, &a.prov).is_ok_and(|h| h == a.hash)
}

/// Secondary-index key of a knowledge entry.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKey {
    Pattern(ContentHash),
    Capability { role: RoleId, tool: String },
    Feedback(RoleId),
}

impl EntryKey {
    pub fn kind(&self) -> EntryKind {
        match self {
            EntryKey::Pattern(_) => EntryKind::Pattern,
            EntryKey::Capability { .. } => EntryKind::Capability,
            EntryKey::Feedback(_) => EntryKind::Feedback,
        }
    }
}

/// Persistent validated record.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: EntryId,
    pub key: EntryKey,
    pub payload: Value,
    pub score: f64,
    pub prov_hash: ContentHash,
    pub created_at: u64,
    pub last_read_at: u64,
}

impl KnowledgeEntry {
    pub fn kind(&self) -> EntryKind {
        self.key.kind()
    }
}

/// Candidate entry emitted by the validator, before the store assigns an id.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct EntryDraft {
    pub key: EntryKey,
    pub payload: Value,
    pub score: f64,
    pub prov_hash: ContentHash,
}

impl EntryDraft {
    pub fn kind(&self) -> EntryKind {
        self.key.kind()
    }
}

/// Hard per-mission resource ceilings. Time is logical milliseconds.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct BudgetVector {
    pub tokens: u64,
    pub time_ms: u64,
    pub risk: f64,
}

impl BudgetVector {
    pub fn new(tokens: u64, time_ms: u64, risk: f64) -> Result<Self, String> {
        let b = BudgetVector { tokens, time_ms, risk };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.risk) {
            return Err(format!("risk ceiling {} outside [0,1]", self.risk));
        }
        Ok(())
    }
}

impl Default for BudgetVector {
    fn default() -> Self {
        BudgetVector { tokens: 1_000_000, time_ms: 3_600_000, risk: 0.9 }
    }
}

/// Predicted or declared resource use of an action or plan.
#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct CostVector {
    pub tok: f64,
    pub time_ms: f64,
    pub risk: f64,
}

impl CostVector {
    pub const ZERO: CostVector = CostVector { tok: 0.0, time_ms: 0.0, risk: 0.0 };

    pub fn new(tok: f64, time_ms: f64, risk: f64) -> Self {
        CostVector { tok, time_ms, risk }
    }

    pub fn is_valid(&self) -> bool {
        self.tok >= 0.0
            && self.time_ms >= 0.0
            && (0.0..=1.0).contains(&self.risk)
            && self.tok.is_finite()
            && self.time_ms.is_finite()
    }
}

/// Remaining headroom used for plan feasibility and cost normalization.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Remaining {
    pub tok: f64,
    pub time_ms: f64,
    pub risk: f64,
}

impl Remaining {
    pub fn full(budget: &BudgetVector) -> Self {
        Remaining { tok: budget.tokens as f64, time_ms: budget.time_ms as f64, risk: budget.risk }
    }

    pub fn admits(&self, cost: &CostVector) -> bool {
        cost.tok <= self.tok && cost.time_ms <= self.time_ms && cost.risk <= self.risk
    }
}

/// Round protocol stage.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Stage {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    #[serde(rename = "DONE")]
    Done,
}

impl Stage {
    pub fn next(self) -> Stage {
        match self {
            Stage::S1 => Stage::S2,
            Stage::S2 => Stage::S3,
            Stage::S3 => Stage::S4,
            Stage::S4 => Stage::S5,
            Stage::S5 => Stage::S6,
            Stage::S6 | Stage::Done => Stage::Done,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::S1 => "S1",
            Stage::S2 => "S2",
            Stage::S3 => "S3",
            Stage::S4 => "S4",
            Stage::S5 => "S5",
            Stage::S6 => "S6",
            Stage::Done => "DONE",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Success,
    Fail,
}

/// Inter-role message types; each is legal only in some stages.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Summary,
    Propose,
    Revise,
    Agree,
    Dispatch,
}

impl MessageKind {
    pub fn legal_in(self, stage: Stage) -> bool {
        match self {
            MessageKind::Summary => matches!(stage, Stage::S2 | Stage::S3),
            MessageKind::Propose | MessageKind::Revise | MessageKind::Agree | MessageKind::Dispatch => stage == Stage::S4,
        }
    }
}
