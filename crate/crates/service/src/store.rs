//! Files under the store root:
//!
//! ```text
//! tasks/<task_id>.json      one document per task
//! rasters/<sha256>.png      content-addressed raster blobs
//! final/<image_id>/         finalized semantic and instance maps
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::ServiceError;
use crate::task::TaskRecord;

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Writes through a sibling temporary file so readers see either the old or
/// the new content.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn valid_ref(r: &str) -> bool {
    r.len() == 64 && r.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

/// Task ids end up in file names.
pub(crate) fn valid_task_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        for sub in ["tasks", "rasters", "final"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn final_dir(&self, image_id: &str) -> PathBuf {
        self.root.join("final").join(image_id)
    }

    /// Stores a PNG blob and returns its reference (lowercase sha256 hex).
    pub fn put_raster(&self, bytes: &[u8]) -> Result<String, ServiceError> {
        let r = hex::encode(Sha256::digest(bytes));
        let path = self.raster_path(&r);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(r)
    }

    pub fn get_raster(&self, r: &str) -> Result<Vec<u8>, ServiceError> {
        if !valid_ref(r) {
            return Err(ServiceError::not_found("raster", r));
        }
        fs::read(self.raster_path(r)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ServiceError::not_found("raster", r),
            _ => e.into(),
        })
    }

    fn raster_path(&self, r: &str) -> PathBuf {
        self.root.join("rasters").join(format!("{r}.png"))
    }

    fn task_path(&self, id: &str) -> PathBuf {
        self.root.join("tasks").join(format!("{id}.json"))
    }

    pub fn load_task(&self, id: &str) -> Result<TaskRecord, ServiceError> {
        if !valid_task_id(id) {
            return Err(ServiceError::not_found("task", id));
        }
        let bytes = fs::read(self.task_path(id)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ServiceError::not_found("task", id),
            _ => e.into(),
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| ServiceError::internal(format!("task document '{id}': {e}")))
    }

    pub fn save_task(&self, task: &TaskRecord) -> Result<(), ServiceError> {
        let mut bytes = serde_json::to_vec_pretty(task).map_err(ServiceError::internal)?;
        bytes.push(b'\n');
        write_atomic(&self.task_path(&task.task_id), &bytes)?;
        Ok(())
    }

    /// All task documents ordered by id.
    pub fn list_tasks(&self) -> Result<Vec<TaskRecord>, ServiceError> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join("tasks"))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                (p.extension()? == "json")
                    .then(|| p.file_stem()?.to_str().map(String::from))
                    .flatten()
            })
            .collect();
        ids.sort();
        ids.iter().map(|id| self.load_task(id)).collect()
    }
}
