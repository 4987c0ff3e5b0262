//! Typed inter-role messages and the stage legality table.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{ContentHash, SerializationError};
pub use crate::model::MessageKind;
use crate::model::{ArtifactId, MessageId, RoleId, Stage};
use crate::workspace::Workspace;

#[derive(Serialize)]
struct HashInput<'a> {
    src: RoleId,
    dst: RoleId,
    kind: MessageKind,
    refs: &'a [ArtifactId],
    payload: &'a Value,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub src: RoleId,
    pub dst: RoleId,
    pub kind: MessageKind,
    pub refs: Vec<ArtifactId>,
    pub payload: Value,
    pub hash: ContentHash,
}

impl Message {
    pub fn new(
        id: MessageId,
        src: RoleId,
        dst: RoleId,
        kind: MessageKind,
        refs: Vec<ArtifactId>,
        payload: Value,
    ) -> Result<Self, SerializationError> {
        let hash = message_hash(src, dst, kind, &refs, &payload)?;
        Ok(Message { id, src, dst, kind, refs, payload, hash })
    }

    pub fn verify(&self) -> bool {
        message_hash(self.src, self.dst, self.kind, &self.refs, &self.payload).is_ok_and(|h| h == self.hash)
    }
}

pub fn message_hash(
    src: RoleId,
    dst: RoleId,
    kind: MessageKind,
    refs: &[ArtifactId],
    payload: &Value,
) -> Result<ContentHash, SerializationError> {
    ContentHash::of(&HashInput { src, dst, kind, refs, payload })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeliveryError {
    #[error("{kind:?} is not legal during {stage}")]
    StageViolation { kind: MessageKind, stage: Stage },
    #[error("message references uncommitted artifact {0}")]
    DanglingRef(ArtifactId),
}

impl DeliveryError {
    pub fn code(&self) -> &'static str {
        match self {
            DeliveryError::StageViolation { .. } => "STAGE_VIOLATION",
            DeliveryError::DanglingRef(_) => "DANGLING_REF",
        }
    }
}

/// Checks legality and reference commitment, then appends to `log`.
pub fn deliver(msg: Message, stage: Stage, ws: &Workspace, log: &mut Vec<Message>) -> Result<(), DeliveryError> {
    if !msg.kind.legal_in(stage) {
        return Err(DeliveryError::StageViolation { kind: msg.kind, stage });
    }
    if let Some(r) = msg.refs.iter().find(|r| !ws.contains(**r)) {
        return Err(DeliveryError::DanglingRef(*r));
    }
    log.push(msg);
    Ok(())
}
