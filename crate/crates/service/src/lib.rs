//! Task service for the manual-correction step.
//!
//! A task wraps one fused label map. Annotators submit run-length edits
//! against the version they last saw; a stale version is rejected with the
//! current one. Finalizing replays the edit log over the fused result,
//! requires every uncertain pixel to be covered, and writes the semantic and
//! instance maps back to the manifest.

pub mod error;
pub mod http;
pub mod service;
pub mod store;
pub mod task;

pub use error::{ErrorCode, ServiceError};
pub use http::{bind, router, serve, ANNOTATOR_HEADER};
pub use service::{ServiceConfig, TaskService};
pub use task::{ExportPayload, TaskPayload, TaskRecord, TaskState, TaskSummary};
