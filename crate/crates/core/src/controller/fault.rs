//! The three recoverable fault kinds and their synthetic records.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adapter::BackendError;
use crate::model::{RoleId, Stage};
use crate::validator::FAULT_RECORD;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultKind {
    BackendTimeout,
    ToolCrash,
    MalformedArtifact,
}

impl FaultKind {
    pub const ALL: [FaultKind; 3] = [FaultKind::BackendTimeout, FaultKind::ToolCrash, FaultKind::MalformedArtifact];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::BackendTimeout => "BACKEND_TIMEOUT",
            FaultKind::ToolCrash => "TOOL_CRASH",
            FaultKind::MalformedArtifact => "MALFORMED_ARTIFACT",
        }
    }
}

impl std::str::FromStr for FaultKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown fault kind {s:?}"))
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct FaultInfo {
    pub kind: FaultKind,
    pub stage: Stage,
    pub role: RoleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    pub detail: String,
}

impl FaultInfo {
    pub fn from_backend(err: &BackendError, stage: Stage, role: RoleId, tool: Option<String>) -> Self {
        let kind = match err {
            BackendError::Timeout { .. } => FaultKind::BackendTimeout,
            BackendError::ToolCrash(_) => FaultKind::ToolCrash,
            // a denied command is a contract breach by the backend
            BackendError::Malformed(_) | BackendError::Env(_) => FaultKind::MalformedArtifact,
        };
        FaultInfo { kind, stage, role, tool, detail: err.to_string() }
    }

    /// Content of the controller's negative-signal record. Carries no
    /// `command` field, so the validator scores it by provenance alone.
    pub fn record(&self) -> Value {
        let mut v = json!({
            "record": FAULT_RECORD,
            "fault": self.kind.as_str(),
            "stage": self.stage,
            "role": self.role,
            "detail": self.detail,
        });
        if let Some(t) = &self.tool {
            v["tool"] = json!(t);
        }
        v
    }
}
