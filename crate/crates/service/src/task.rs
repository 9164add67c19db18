use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use segfuse_core::fusion::{EditOp, FusionStats};
use segfuse_core::instance::{InstanceEdit, InstanceInfo};
use segfuse_core::raster::ClassCatalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskState {
    Open,
    InProgress,
    Finalized,
}

impl FromStr for TaskState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "OPEN" => Ok(TaskState::Open),
            "IN_PROGRESS" => Ok(TaskState::InProgress),
            "FINALIZED" => Ok(TaskState::Finalized),
            _ => Err(format!("unknown task state '{s}'")),
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskState::Open => "OPEN",
            TaskState::InProgress => "IN_PROGRESS",
            TaskState::Finalized => "FINALIZED",
        })
    }
}

/// Wall-clock span during which one annotator submitted mutations.
/// Times are milliseconds since the Unix epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub annotator_id: String,
    pub started_at: u64,
    pub ended_at: u64,
}

/// Raster store references of the fused inputs of a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedRefs {
    pub labels: String,
    pub uncertainty: String,
    pub confidence: String,
    pub reliable: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRefs {
    pub semantic: String,
    pub instances: String,
    pub instance_table: Vec<InstanceInfo>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Persisted task document. `edits` and `instance_edits` only ever grow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub image_id: String,
    pub version: u64,
    pub state: TaskState,
    pub width: usize,
    pub height: usize,
    pub fused: FusedRefs,
    pub stats: FusionStats,
    #[serde(default)]
    pub edits: Vec<EditOp>,
    #[serde(default)]
    pub instance_edits: Vec<InstanceEdit>,
    #[serde(default)]
    pub sessions: Vec<Session>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finalized: Option<FinalRefs>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub image_id: String,
    pub state: TaskState,
    pub version: u64,
}

impl From<&TaskRecord> for TaskSummary {
    fn from(t: &TaskRecord) -> Self {
        Self {
            task_id: t.task_id.clone(),
            image_id: t.image_id.clone(),
            state: t.state,
            version: t.version,
        }
    }
}

/// URLs a client resolves against the service root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadRefs {
    pub image: String,
    pub labels: String,
    pub uncertainty: String,
    pub confidence: String,
    pub reliable: String,
}

/// Response of `GET /tasks/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub task_id: String,
    pub image_id: String,
    pub state: TaskState,
    pub version: u64,
    pub width: usize,
    pub height: usize,
    pub refs: PayloadRefs,
    pub catalog: ClassCatalog,
    pub stats: FusionStats,
    /// Sentinel pixels left after applying the accepted edits.
    pub remaining_uncertain: usize,
    pub edits: Vec<EditOp>,
    pub instance_edits: Vec<InstanceEdit>,
    pub sessions: Vec<Session>,
}

/// Response of `GET /tasks/{id}/export`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportPayload {
    pub task_id: String,
    pub image_id: String,
    pub version: u64,
    pub semantic: String,
    pub instances: String,
    pub instance_table: Vec<InstanceInfo>,
    pub warnings: Vec<String>,
}

pub fn raster_url(r: &str) -> String {
    format!("/rasters/{r}")
}

pub fn image_url(image_id: &str) -> String {
    format!("/images/{image_id}")
}
