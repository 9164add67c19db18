use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use segfuse_core::catalog::{self, ManifestEntry, Status, WeatherVocabulary};
use segfuse_core::fusion::{
    apply_edits, merge_manual, uncertainty_map, validate_edits, ConfidenceGrid, EditOp,
    FusedResult, FusionError,
};
use segfuse_core::instance::{apply_instance_edits, split_instances, InstanceEdit, InstanceMap};
use segfuse_core::io as seg_io;
use segfuse_core::raster::{self, ClassCatalog, LabelMap};

use crate::error::{ErrorCode, ServiceError};
use crate::store::{write_atomic, Store};
use crate::task::{
    image_url, raster_url, ExportPayload, FinalRefs, FusedRefs, PayloadRefs, Session,
    TaskPayload, TaskRecord, TaskState, TaskSummary,
};

/// Mutations by the same annotator closer together than this extend the
/// current session instead of opening a new one.
pub const SESSION_IDLE_MS: u64 = 15 * 60 * 1000;

const MAX_ANNOTATOR_ID: usize = 128;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store_dir: PathBuf,
    pub manifest: PathBuf,
    /// Holds one `<image_id>/` directory of fused rasters per image.
    pub fused_dir: PathBuf,
    pub catalog: ClassCatalog,
    pub instance_classes: BTreeSet<u8>,
    pub weather: WeatherVocabulary,
}

impl ServiceConfig {
    pub fn new(
        store_dir: impl Into<PathBuf>,
        manifest: impl Into<PathBuf>,
        fused_dir: impl Into<PathBuf>,
    ) -> Self {
        let catalog = ClassCatalog::cityscapes();
        Self {
            store_dir: store_dir.into(),
            manifest: manifest.into(),
            fused_dir: fused_dir.into(),
            instance_classes: catalog.default_instance_classes(),
            catalog,
            weather: WeatherVocabulary::default(),
        }
    }
}

pub struct TaskService {
    cfg: ServiceConfig,
    store: Store,
    task_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    // task creation and every manifest rewrite
    manifest_lock: Mutex<()>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn check_mutable(task: &TaskRecord, base_version: u64) -> Result<(), ServiceError> {
    if task.state == TaskState::Finalized {
        return Err(ServiceError::new(
            ErrorCode::Gone,
            format!("task '{}' is finalized", task.task_id),
        ));
    }
    if base_version != task.version {
        return Err(ServiceError::conflict_version(task.version, base_version));
    }
    Ok(())
}

fn record_session(task: &mut TaskRecord, annotator: Option<&str>, now: u64) {
    let Some(who) = annotator else { return };
    if let Some(s) = task
        .sessions
        .iter_mut()
        .rev()
        .find(|s| s.annotator_id == who)
    {
        if now.saturating_sub(s.ended_at) <= SESSION_IDLE_MS {
            s.ended_at = s.ended_at.max(now);
            return;
        }
    }
    task.sessions.push(Session {
        annotator_id: who.to_string(),
        started_at: now,
        ended_at: now,
    });
}

fn edit_error(e: FusionError) -> ServiceError {
    match e {
        FusionError::InvalidEdit { index, reason } => {
            ServiceError::validation(format!("edit {index}: {reason}"))
                .with_details(json!({ "index": index }))
        }
        other => ServiceError::internal(other),
    }
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("ppm") => "image/x-portable-pixmap",
        _ => "application/octet-stream",
    }
}

impl TaskService {
    pub fn open(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let store = Store::open(&cfg.store_dir)?;
        Ok(Self {
            cfg,
            store,
            task_locks: Mutex::new(HashMap::new()),
            manifest_lock: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn task_lock(&self, id: &str) -> Arc<Mutex<()>> {
        lock(&self.task_locks)
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    fn load_manifest(&self) -> Result<Vec<ManifestEntry>, ServiceError> {
        Ok(catalog::load_manifest(&self.cfg.manifest, &self.cfg.weather)?)
    }

    fn update_manifest(
        &self,
        image_id: &str,
        f: impl FnOnce(&mut ManifestEntry),
    ) -> Result<(), ServiceError> {
        let mut entries = self.load_manifest()?;
        let e = entries
            .iter_mut()
            .find(|e| e.image_id == image_id)
            .ok_or_else(|| ServiceError::not_found("image", image_id))?;
        f(e);
        catalog::save_manifest(&entries, &self.cfg.manifest)?;
        Ok(())
    }

    pub fn check_annotator(id: &str) -> Result<(), ServiceError> {
        if id.is_empty() || id.len() > MAX_ANNOTATOR_ID || id.chars().any(char::is_control) {
            return Err(ServiceError::validation(
                "annotator id must be 1-128 printable characters",
            ));
        }
        Ok(())
    }

    /// Opens a task for a FUSED image and marks the image ANNOTATING.
    pub fn create_task(&self, image_id: &str) -> Result<TaskRecord, ServiceError> {
        let _guard = lock(&self.manifest_lock);
        let entries = self.load_manifest()?;
        let entry = entries
            .iter()
            .find(|e| e.image_id == image_id)
            .ok_or_else(|| ServiceError::not_found("image", image_id))?;
        let existing = self.store.list_tasks()?;
        if let Some(t) = existing
            .iter()
            .find(|t| t.image_id == image_id && t.state != TaskState::Finalized)
        {
            return Err(ServiceError::new(
                ErrorCode::Conflict,
                format!("image '{image_id}' already has open task '{}'", t.task_id),
            )
            .with_details(json!({ "task_id": t.task_id })));
        }
        if entry.status != Status::Fused {
            return Err(ServiceError::new(
                ErrorCode::PreconditionFailed,
                format!(
                    "image '{image_id}' has status {:?}, tasks need FUSED",
                    entry.status
                ),
            )
            .with_details(json!({ "status": entry.status })));
        }

        let dir = self.cfg.fused_dir.join(image_id);
        let fused = seg_io::load_fused(&dir, &self.cfg.catalog).map_err(|e| {
            ServiceError::new(
                ErrorCode::PreconditionFailed,
                format!("fused result for '{image_id}' is unreadable: {e}"),
            )
        })?;
        let refs = self.store_fused(&fused)?;
        let task = TaskRecord {
            task_id: format!("t{:06}", existing.len() + 1),
            image_id: image_id.to_string(),
            version: 0,
            state: TaskState::Open,
            width: fused.width(),
            height: fused.height(),
            fused: refs,
            stats: fused.stats.clone(),
            edits: Vec::new(),
            instance_edits: Vec::new(),
            sessions: Vec::new(),
            finalized: None,
        };
        self.store.save_task(&task)?;
        self.update_manifest(image_id, |e| e.status = Status::Annotating)?;
        Ok(task)
    }

    fn store_fused(&self, r: &FusedResult) -> Result<FusedRefs, ServiceError> {
        let cat = &self.cfg.catalog;
        Ok(FusedRefs {
            labels: self
                .store
                .put_raster(&raster::encode_label_map(&r.labels, cat)?)?,
            uncertainty: self
                .store
                .put_raster(&raster::encode_label_map(&uncertainty_map(r), cat)?)?,
            confidence: self.store.put_raster(&raster::encode_gray16(
                r.width(),
                r.height(),
                &r.confidence.to_fixed16(),
            )?)?,
            reliable: self.store.put_raster(&raster::encode_bitmask(&r.reliable)?)?,
        })
    }

    /// Rebuilds the fused result a task was created from.
    pub fn fused_of(&self, task: &TaskRecord) -> Result<FusedResult, ServiceError> {
        let labels =
            raster::decode_label_map(&self.store.get_raster(&task.fused.labels)?, &self.cfg.catalog)?;
        let (w, h, conf) = raster::decode_gray16(&self.store.get_raster(&task.fused.confidence)?)?;
        let confidence = ConfidenceGrid::from_fixed16(w, h, &conf)
            .ok_or_else(|| ServiceError::internal("confidence raster size"))?;
        let reliable = raster::decode_bitmask(&self.store.get_raster(&task.fused.reliable)?)?;
        FusedResult::from_parts(labels, confidence, reliable).map_err(ServiceError::internal)
    }

    /// Uncertainty map with the accepted edits painted on; may still hold
    /// sentinel pixels.
    fn provisional_labels(&self, task: &TaskRecord) -> Result<LabelMap, ServiceError> {
        let mut map = raster::decode_label_map(
            &self.store.get_raster(&task.fused.uncertainty)?,
            &self.cfg.catalog,
        )?;
        apply_edits(&mut map, &task.edits).map_err(edit_error)?;
        Ok(map)
    }

    pub fn get_task(&self, task_id: &str) -> Result<TaskRecord, ServiceError> {
        self.store.load_task(task_id)
    }

    pub fn task_payload(&self, task_id: &str) -> Result<TaskPayload, ServiceError> {
        let t = self.store.load_task(task_id)?;
        let remaining = self.provisional_labels(&t)?.sentinel_pixels().len();
        Ok(TaskPayload {
            refs: PayloadRefs {
                image: image_url(&t.image_id),
                labels: raster_url(&t.fused.labels),
                uncertainty: raster_url(&t.fused.uncertainty),
                confidence: raster_url(&t.fused.confidence),
                reliable: raster_url(&t.fused.reliable),
            },
            catalog: self.cfg.catalog.clone(),
            remaining_uncertain: remaining,
            task_id: t.task_id,
            image_id: t.image_id,
            state: t.state,
            version: t.version,
            width: t.width,
            height: t.height,
            stats: t.stats,
            edits: t.edits,
            instance_edits: t.instance_edits,
            sessions: t.sessions,
        })
    }

    pub fn list_tasks(&self, state: Option<TaskState>) -> Result<Vec<TaskSummary>, ServiceError> {
        Ok(self
            .store
            .list_tasks()?
            .iter()
            .filter(|t| state.is_none_or(|s| s == t.state))
            .map(TaskSummary::from)
            .collect())
    }

    /// Runs `f` on the task under its lock; on success the version is bumped
    /// and the document persisted.
    fn mutate<T>(
        &self,
        task_id: &str,
        annotator: Option<&str>,
        f: impl FnOnce(&mut TaskRecord) -> Result<T, ServiceError>,
    ) -> Result<(TaskRecord, T), ServiceError> {
        if let Some(a) = annotator {
            Self::check_annotator(a)?;
        }
        let l = self.task_lock(task_id);
        let _guard = lock(&l);
        let mut task = self.store.load_task(task_id)?;
        let out = f(&mut task)?;
        task.version += 1;
        record_session(&mut task, annotator, now_ms());
        self.store.save_task(&task)?;
        Ok((task, out))
    }

    pub fn submit_edits(
        &self,
        task_id: &str,
        base_version: u64,
        edits: Vec<EditOp>,
        annotator: Option<&str>,
    ) -> Result<TaskRecord, ServiceError> {
        self.mutate(task_id, annotator, |task| {
            check_mutable(task, base_version)?;
            if edits.is_empty() {
                return Err(ServiceError::validation("edit list is empty"));
            }
            validate_edits(&edits, task.width, task.height, Some(&self.cfg.catalog))
                .map_err(edit_error)?;
            task.edits.extend(edits);
            task.state = TaskState::InProgress;
            Ok(())
        })
        .map(|(t, _)| t)
    }

    /// Instance ids refer to the instance map of the current labels (sentinel
    /// pixels excluded). The edits are checked against that map now and
    /// applied again at finalization.
    pub fn submit_instance_edits(
        &self,
        task_id: &str,
        base_version: u64,
        edits: Vec<InstanceEdit>,
        annotator: Option<&str>,
    ) -> Result<TaskRecord, ServiceError> {
        self.mutate(task_id, annotator, |task| {
            check_mutable(task, base_version)?;
            if edits.is_empty() {
                return Err(ServiceError::validation("edit list is empty"));
            }
            let labels = self.provisional_labels(task)?;
            let all: Vec<InstanceEdit> = task.instance_edits.iter().chain(&edits).cloned().collect();
            apply_instance_edits(&split_instances(&labels, &self.cfg.instance_classes), &all)
                .map_err(|e| ServiceError::validation(format!("instance edit: {e}")))?;
            task.instance_edits.extend(edits);
            task.state = TaskState::InProgress;
            Ok(())
        })
        .map(|(t, _)| t)
    }

    /// Final label map and instance map of a task's current edit log.
    pub fn replay(&self, task: &TaskRecord) -> Result<(LabelMap, InstanceMap, Vec<String>), ServiceError> {
        let fused = self.fused_of(task)?;
        let labels = merge_manual(&fused, &task.edits).map_err(|e| match e {
            FusionError::Unresolved { count, first, .. } => ServiceError::new(
                ErrorCode::PreconditionFailed,
                format!("{count} pixels are still unlabeled, first at (row {}, col {})", first.0, first.1),
            )
            .with_details(json!({ "remaining": count, "first": [first.0, first.1] })),
            other => edit_error(other),
        })?;
        let base = split_instances(&labels, &self.cfg.instance_classes);
        let (instances, warnings) = apply_instance_edits(&base, &task.instance_edits)
            .map_err(|e| ServiceError::validation(format!("instance edit: {e}")))?;
        Ok((labels, instances, warnings))
    }

    pub fn finalize_task(
        &self,
        task_id: &str,
        base_version: u64,
        annotator: Option<&str>,
    ) -> Result<(TaskRecord, LabelMap), ServiceError> {
        self.mutate(task_id, annotator, |task| {
            check_mutable(task, base_version)?;
            let (labels, instances, warnings) = self.replay(task)?;

            let semantic_bytes = raster::encode_label_map(&labels, &self.cfg.catalog)?;
            let dir = self.store.final_dir(&task.image_id);
            let semantic_path = dir.join("semantic.png");
            write_atomic(&semantic_path, &semantic_bytes)?;
            seg_io::save_instances(&dir, "instances", &instances)?;
            let instance_path = dir.join("instances.png");
            let instance_ref = self.store.put_raster(&std::fs::read(&instance_path)?)?;
            let semantic_ref = self.store.put_raster(&semantic_bytes)?;

            {
                let _guard = lock(&self.manifest_lock);
                self.update_manifest(&task.image_id, |e| {
                    e.status = Status::Finalized;
                    e.semantic_ref = Some(semantic_path.display().to_string());
                    e.instance_ref = Some(instance_path.display().to_string());
                })?;
            }

            task.state = TaskState::Finalized;
            task.finalized = Some(FinalRefs {
                semantic: semantic_ref,
                instances: instance_ref,
                instance_table: instances.summary(),
                warnings,
            });
            Ok(labels)
        })
    }

    pub fn export(&self, task_id: &str) -> Result<ExportPayload, ServiceError> {
        let t = self.store.load_task(task_id)?;
        let Some(f) = t.finalized else {
            return Err(ServiceError::new(
                ErrorCode::PreconditionFailed,
                format!("task '{task_id}' is not finalized"),
            )
            .with_details(json!({ "state": t.state })));
        };
        Ok(ExportPayload {
            task_id: t.task_id,
            image_id: t.image_id,
            version: t.version,
            semantic: raster_url(&f.semantic),
            instances: raster_url(&f.instances),
            instance_table: f.instance_table,
            warnings: f.warnings,
        })
    }

    /// Source image bytes and content type.
    pub fn image(&self, image_id: &str) -> Result<(Vec<u8>, &'static str), ServiceError> {
        let entries = self.load_manifest()?;
        let e = entries
            .iter()
            .find(|e| e.image_id == image_id)
            .ok_or_else(|| ServiceError::not_found("image", image_id))?;
        let mut path = PathBuf::from(&e.image_ref);
        if path.is_relative() {
            if let Some(base) = self.cfg.manifest.parent() {
                path = base.join(path);
            }
        }
        let bytes = std::fs::read(&path).map_err(|err| match err.kind() {
            std::io::ErrorKind::NotFound => ServiceError::not_found("image file", &e.image_ref),
            _ => err.into(),
        })?;
        Ok((bytes, content_type(&path)))
    }

    pub fn raster(&self, r: &str) -> Result<Vec<u8>, ServiceError> {
        self.store.get_raster(r)
    }
}
