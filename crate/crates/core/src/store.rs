//! The server-side store: projects, their event logs, blobs and models.
//!
//! Every mutation of a project goes through [`Store::apply_event`] (or the
//! trainer, which appends `ModelTrained` the same way) while holding that
//! project's write lock, so the log is linearizable per project. Events are
//! written to disk before they are applied in memory or acknowledged.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::UnboundedSender;

use crate::blob::BlobStore;
use crate::error::{CoreError, Result};
use crate::event::{EventDraft, EventPayload, EventRecord};
use crate::features::{self, FeatureVector};
use crate::game::ProjectGames;
use crate::ids::{BlobHash, LabelId, ProjectId, SampleId};
use crate::project::{validate_name, DatasetReport, ProjectState, TrainingSample};
use crate::trainer::{ModelVersion, TrainConfig};

pub type TimeSource = Arc<dyn Fn() -> u64 + Send + Sync>;

pub const PROJECT_META_SCHEMA: u32 = 1;

fn system_time_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMeta {
    pub schema_version: u32,
    pub id: ProjectId,
    pub name: String,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSummary {
    pub id: ProjectId,
    pub name: String,
    pub created_at_ms: u64,
    pub head_seq: u64,
    pub model_version: Option<u64>,
}

pub(crate) struct ProjectInner {
    pub(crate) state: ProjectState,
    pub(crate) log: Vec<EventRecord>,
    pub(crate) model: Option<Arc<ModelVersion>>,
    pub(crate) subscribers: Vec<UnboundedSender<EventRecord>>,
    log_file: Option<File>,
}

pub(crate) struct ProjectHandle {
    pub(crate) inner: RwLock<ProjectInner>,
    /// Held for the duration of a training run.
    pub(crate) training: Mutex<()>,
    pub(crate) games: ProjectGames,
}

pub struct Store {
    root: Option<PathBuf>,
    pub(crate) blobs: BlobStore,
    projects: RwLock<HashMap<ProjectId, Arc<ProjectHandle>>>,
    feature_cache: Mutex<HashMap<BlobHash, Arc<FeatureVector>>>,
    time: TimeSource,
    pub(crate) train_config: TrainConfig,
    pub(crate) games: crate::game::GameRegistry,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish_non_exhaustive()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Store {
            root: None,
            blobs: BlobStore::in_memory(),
            projects: RwLock::new(HashMap::new()),
            feature_cache: Mutex::new(HashMap::new()),
            time: Arc::new(system_time_ms),
            train_config: TrainConfig::default(),
            games: Default::default(),
        }
    }

    /// Opens (or initializes) a data directory and replays every project log.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("projects"))?;
        let blobs = BlobStore::open(root.join("blobs"))?;
        let mut store = Store { root: Some(root.clone()), blobs, ..Store::in_memory() };
        let mut projects = HashMap::new();
        for entry in fs::read_dir(root.join("projects"))? {
            let dir = entry?.path();
            if !dir.join("project.json").is_file() {
                continue;
            }
            let handle = store.load_project(&dir)?;
            let id = handle.inner.read().state.id;
            projects.insert(id, Arc::new(handle));
        }
        store.projects = RwLock::new(projects);
        Ok(store)
    }

    pub fn with_time_source(mut self, time: TimeSource) -> Self {
        self.time = time;
        self
    }

    pub fn with_train_config(mut self, config: TrainConfig) -> Self {
        self.train_config = config;
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train_config
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub(crate) fn now_ms(&self) -> u64 {
        (self.time)()
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    fn load_project(&self, dir: &Path) -> Result<ProjectHandle> {
        let meta: ProjectMeta = serde_json::from_slice(&fs::read(dir.join("project.json"))?)?;
        let events_path = dir.join("events.jsonl");
        let mut log = Vec::new();
        if events_path.exists() {
            let lines: Vec<String> =
                BufReader::new(File::open(&events_path)?).lines().collect::<std::io::Result<_>>()?;
            let last = lines.len();
            let mut valid_bytes = 0u64;
            for (i, line) in lines.iter().enumerate() {
                if line.is_empty() {
                    continue;
                }
                match serde_json::from_str::<EventRecord>(line) {
                    Ok(rec) => {
                        log.push(rec);
                        valid_bytes += line.len() as u64 + 1;
                    }
                    // A torn final write from a crash: drop it.
                    Err(_) if i + 1 == last => {
                        OpenOptions::new().write(true).open(&events_path)?.set_len(valid_bytes)?;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let state = ProjectState::replay(meta.id, meta.name, meta.created_at_ms, &log)?;
        let model = match &state.current_model {
            Some(m) => Some(Arc::new(ModelVersion::from_json(&self.blobs.get(&m.model_ref)?)?)),
            None => None,
        };
        let log_file = OpenOptions::new().create(true).append(true).open(&events_path)?;
        let games = ProjectGames::load(dir)?;
        Ok(ProjectHandle {
            inner: RwLock::new(ProjectInner {
                state,
                log,
                model,
                subscribers: Vec::new(),
                log_file: Some(log_file),
            }),
            training: Mutex::new(()),
            games,
        })
    }

    pub(crate) fn handle(&self, id: ProjectId) -> Result<Arc<ProjectHandle>> {
        self.projects.read().get(&id).cloned().ok_or(CoreError::ProjectNotFound(id))
    }

    pub fn create_project(&self, name: &str) -> Result<ProjectState> {
        let name = validate_name(name)?.to_owned();
        let meta = ProjectMeta {
            schema_version: PROJECT_META_SCHEMA,
            id: ProjectId::new(),
            name,
            created_at_ms: self.now_ms(),
        };
        self.insert_project(meta, Vec::new())
    }

    /// Registers a project from its metadata and an already ordered log.
    pub(crate) fn insert_project(
        &self,
        meta: ProjectMeta,
        log: Vec<EventRecord>,
    ) -> Result<ProjectState> {
        let mut projects = self.projects.write();
        for p in projects.values() {
            let inner = p.inner.read();
            if inner.state.name == meta.name {
                return Err(CoreError::DuplicateProjectName(meta.name));
            }
        }
        if projects.contains_key(&meta.id) {
            return Err(CoreError::DuplicateProjectId(meta.id));
        }
        let state = ProjectState::replay(meta.id, meta.name.clone(), meta.created_at_ms, &log)?;
        let model = match &state.current_model {
            Some(m) => Some(Arc::new(ModelVersion::from_json(&self.blobs.get(&m.model_ref)?)?)),
            None => None,
        };
        let (dir, log_file) = match &self.root {
            Some(root) => {
                let dir = root.join("projects").join(meta.id.to_string());
                fs::create_dir_all(&dir)?;
                let mut events = File::create(dir.join("events.jsonl"))?;
                for rec in &log {
                    serde_json::to_writer(&mut events, rec)?;
                    events.write_all(b"\n")?;
                }
                events.sync_all()?;
                write_atomic(&dir.join("project.json"), &serde_json::to_vec_pretty(&meta)?)?;
                let f = OpenOptions::new().append(true).open(dir.join("events.jsonl"))?;
                (Some(dir), Some(f))
            }
            None => (None, None),
        };
        let games = ProjectGames::with_dir(dir.as_deref());
        let handle = ProjectHandle {
            inner: RwLock::new(ProjectInner {
                state: state.clone(),
                log,
                model,
                subscribers: Vec::new(),
                log_file,
            }),
            training: Mutex::new(()),
            games,
        };
        projects.insert(meta.id, Arc::new(handle));
        Ok(state)
    }

    pub fn list_projects(&self) -> Vec<ProjectSummary> {
        let mut out: Vec<ProjectSummary> = self
            .projects
            .read()
            .values()
            .map(|h| {
                let s = &h.inner.read().state;
                ProjectSummary {
                    id: s.id,
                    name: s.name.clone(),
                    created_at_ms: s.created_at_ms,
                    head_seq: s.head_seq,
                    model_version: s.current_model.as_ref().map(|m| m.version),
                }
            })
            .collect();
        out.sort_by(|a, b| (a.created_at_ms, &a.name).cmp(&(b.created_at_ms, &b.name)));
        out
    }

    pub fn project_by_name(&self, name: &str) -> Option<ProjectId> {
        self.projects
            .read()
            .values()
            .map(|h| h.inner.read().state.clone())
            .find(|s| s.name == name)
            .map(|s| s.id)
    }

    /// A consistent snapshot of the project's state.
    pub fn project(&self, id: ProjectId) -> Result<ProjectState> {
        Ok(self.handle(id)?.inner.read().state.clone())
    }

    pub fn dataset_report(&self, id: ProjectId) -> Result<DatasetReport> {
        Ok(self.handle(id)?.inner.read().state.dataset_report())
    }

    pub fn current_model(&self, id: ProjectId) -> Result<Arc<ModelVersion>> {
        self.handle(id)?.inner.read().model.clone().ok_or(CoreError::NoModel)
    }

    /// Orders, persists and applies one mutation.
    pub fn apply_event(&self, id: ProjectId, draft: EventDraft) -> Result<EventRecord> {
        let handle = self.handle(id)?;
        let mut inner = handle.inner.write();
        self.append(&mut inner, draft)
    }

    pub(crate) fn append(&self, inner: &mut ProjectInner, draft: EventDraft) -> Result<EventRecord> {
        inner.state.validate(&draft.payload)?;
        for blob in draft.payload.blob_refs() {
            if !self.blobs.contains(blob) {
                return Err(CoreError::BlobNotFound(blob.clone()));
            }
        }
        let record = EventRecord {
            seq: inner.state.head_seq + 1,
            project_id: inner.state.id,
            author: draft.author,
            server_time_ms: self.now_ms(),
            payload: draft.payload,
        };
        if let Some(f) = inner.log_file.as_mut() {
            let mut line = serde_json::to_vec(&record)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        inner.state.apply(&record)?;
        inner.log.push(record.clone());
        inner.subscribers.retain(|tx| tx.send(record.clone()).is_ok());
        Ok(record)
    }

    /// Stores image bytes after checking they decode, caching their features.
    pub fn put_image(&self, bytes: &[u8]) -> Result<BlobHash> {
        let hash = BlobHash::of(bytes);
        if !self.feature_cache.lock().contains_key(&hash) {
            let f = features::extract_features(bytes)?;
            self.feature_cache.lock().insert(hash.clone(), Arc::new(f));
        }
        self.blobs.put(bytes)
    }

    pub fn features_for(&self, hash: &BlobHash) -> Result<Arc<FeatureVector>> {
        if let Some(f) = self.feature_cache.lock().get(hash) {
            return Ok(f.clone());
        }
        let f = Arc::new(features::extract_features(&self.blobs.get(hash)?)?);
        self.feature_cache.lock().insert(hash.clone(), f.clone());
        Ok(f)
    }

    pub fn clear_feature_cache(&self) {
        self.feature_cache.lock().clear();
    }

    pub fn add_label(&self, id: ProjectId, name: &str, author: &str) -> Result<LabelId> {
        let rec = self.apply_event(
            id,
            EventDraft::new(author, EventPayload::LabelAdded { name: name.to_owned() }),
        )?;
        Ok(LabelId(rec.seq))
    }

    /// Uploads an image and records it as a training sample. With a dedupe key
    /// that was seen before, returns the earlier sample and `false`.
    pub fn add_sample(
        &self,
        id: ProjectId,
        label_id: LabelId,
        bytes: &[u8],
        author: &str,
        dedupe_key: Option<String>,
    ) -> Result<(TrainingSample, bool)> {
        let handle = self.handle(id)?;
        if let Some(key) = &dedupe_key {
            let inner = handle.inner.read();
            if let Some(sid) = inner.state.dedupe_keys.get(key) {
                return Ok((inner.state.samples[sid].clone(), false));
            }
        }
        let image_ref = self.put_image(bytes)?;
        let mut inner = handle.inner.write();
        if let Some(key) = &dedupe_key {
            if let Some(sid) = inner.state.dedupe_keys.get(key) {
                return Ok((inner.state.samples[sid].clone(), false));
            }
        }
        let rec = self.append(
            &mut inner,
            EventDraft::new(author, EventPayload::SampleAdded { label_id, image_ref, dedupe_key }),
        )?;
        Ok((inner.state.samples[&SampleId(rec.seq)].clone(), true))
    }

    pub(crate) fn store_model(&self, model: &ModelVersion) -> Result<BlobHash> {
        self.blobs.put(&model.to_json())
    }

    /// Every blob referenced by any project's log.
    pub fn referenced_blobs(&self) -> HashSet<BlobHash> {
        let mut keep = HashSet::new();
        for h in self.projects.read().values() {
            for rec in &h.inner.read().log {
                keep.extend(rec.payload.blob_refs().into_iter().cloned());
            }
        }
        keep
    }

    /// Removes blobs no event references. Returns the number removed.
    pub fn collect_garbage(&self) -> Result<usize> {
        // Hold every project's write lock so no upload lands mid-sweep.
        let projects = self.projects.read();
        let _guards: Vec<_> = projects.values().map(|h| h.inner.write()).collect();
        let mut keep = HashSet::new();
        for g in &_guards {
            for rec in &g.log {
                keep.extend(rec.payload.blob_refs().into_iter().cloned());
            }
        }
        self.feature_cache.lock().retain(|h, _| keep.contains(h));
        self.blobs.retain(&keep)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)?;
    Ok(())
}
