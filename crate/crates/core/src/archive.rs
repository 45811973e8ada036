//! Project export and import.
//!
//! On disk an archive is a directory holding `manifest.json` and
//! `blobs/<hex-sha256>` files (image bytes verbatim, plus model payloads).
//! The manifest carries the full event log; import replays it, so a round
//! trip reproduces the exact state and head seq.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event::EventRecord;
use crate::ids::{BlobHash, LabelId, ProjectId, SampleId, TestSampleId};
use crate::project::{Label, ProjectState};
use crate::store::{ProjectMeta, Store, PROJECT_META_SCHEMA};

pub const ARCHIVE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestProject {
    pub id: ProjectId,
    pub name: String,
    pub created_at_ms: u64,
    pub head_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: SampleId,
    pub label_id: LabelId,
    pub label_name: String,
    pub author: String,
    pub image_ref: BlobHash,
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTestSample {
    pub id: TestSampleId,
    pub image_ref: BlobHash,
    pub expected_label_id: Option<LabelId>,
    pub latest_model_version: Option<u64>,
    pub author: String,
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub project: ManifestProject,
    pub labels: Vec<Label>,
    pub samples: Vec<ManifestSample>,
    pub test_samples: Vec<ManifestTestSample>,
    pub events: Vec<EventRecord>,
}

impl Manifest {
    fn describe(state: &ProjectState, events: Vec<EventRecord>) -> Self {
        let label_name =
            |id: LabelId| state.label(id).map(|l| l.name.clone()).unwrap_or_default();
        Manifest {
            schema_version: ARCHIVE_SCHEMA_VERSION,
            project: ManifestProject {
                id: state.id,
                name: state.name.clone(),
                created_at_ms: state.created_at_ms,
                head_seq: state.head_seq,
            },
            labels: state.labels.clone(),
            samples: state
                .samples
                .values()
                .map(|s| ManifestSample {
                    id: s.id,
                    label_id: s.label_id,
                    label_name: label_name(s.label_id),
                    author: s.author.clone(),
                    image_ref: s.image_ref.clone(),
                    deleted: s.deleted,
                })
                .collect(),
            test_samples: state
                .test_samples
                .values()
                .map(|t| ManifestTestSample {
                    id: t.id,
                    image_ref: t.image_ref.clone(),
                    expected_label_id: t.expected_label_id,
                    latest_model_version: t.latest_model_version,
                    author: t.author.clone(),
                    deleted: t.deleted,
                })
                .collect(),
            events,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub manifest: Manifest,
    pub blobs: BTreeMap<BlobHash, Vec<u8>>,
}

impl Archive {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("blobs"))?;
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&self.manifest)?)?;
        for (hash, bytes) in &self.blobs {
            fs::write(dir.join("blobs").join(hash.as_str()), bytes)?;
        }
        Ok(())
    }

    /// Reads an archive directory, verifying every blob against its name.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let mut blobs = BTreeMap::new();
        let blob_dir = dir.join("blobs");
        if blob_dir.is_dir() {
            for entry in fs::read_dir(&blob_dir)? {
                let entry = entry?;
                let name = entry.file_name();
                let name = name.to_string_lossy();
                let hash: BlobHash = name
                    .parse()
                    .map_err(|_| CoreError::Archive(format!("unexpected file blobs/{name}")))?;
                blobs.insert(hash, fs::read(entry.path())?);
            }
        }
        Ok(Archive { manifest, blobs })
    }
}

impl Store {
    pub fn export_project(&self, id: ProjectId) -> Result<Archive> {
        let handle = self.handle(id)?;
        let (state, events) = {
            let inner = handle.inner.read();
            (inner.state.clone(), inner.log.clone())
        };
        let mut blobs = BTreeMap::new();
        for e in &events {
            for hash in e.payload.blob_refs() {
                if !blobs.contains_key(hash) {
                    blobs.insert(hash.clone(), self.blobs.get(hash)?);
                }
            }
        }
        Ok(Archive { manifest: Manifest::describe(&state, events), blobs })
    }

    pub fn export_to_dir(&self, id: ProjectId, dir: &Path) -> Result<Archive> {
        let archive = self.export_project(id)?;
        archive.write_dir(dir)?;
        Ok(archive)
    }

    /// Recreates a project from an archive. Every referenced blob must be
    /// present and hash to its name, and the replayed log must agree with
    /// the manifest's listings.
    pub fn import_archive(&self, archive: &Archive) -> Result<ProjectState> {
        let m = &archive.manifest;
        if m.schema_version != ARCHIVE_SCHEMA_VERSION {
            return Err(CoreError::Archive(format!("unsupported schema version {}", m.schema_version)));
        }
        for (hash, bytes) in &archive.blobs {
            let actual = BlobHash::of(bytes);
            if &actual != hash {
                return Err(CoreError::BlobCorrupt { expected: hash.clone(), actual });
            }
        }
        for e in &m.events {
            for hash in e.payload.blob_refs() {
                if !archive.blobs.contains_key(hash) {
                    return Err(CoreError::BlobNotFound(hash.clone()));
                }
            }
        }
        let replayed =
            ProjectState::replay(m.project.id, m.project.name.clone(), m.project.created_at_ms, &m.events)?;
        if Manifest::describe(&replayed, m.events.clone()) != *m {
            return Err(CoreError::Archive("manifest does not match its event log".into()));
        }
        for (hash, bytes) in &archive.blobs {
            if m.events.iter().any(|e| e.payload.blob_refs().contains(&hash)) {
                self.blobs.put(bytes)?;
            }
        }
        let meta = ProjectMeta {
            schema_version: PROJECT_META_SCHEMA,
            id: m.project.id,
            name: m.project.name.clone(),
            created_at_ms: m.project.created_at_ms,
        };
        self.insert_project(meta, m.events.clone())
    }

    pub fn import_from_dir(&self, dir: &Path) -> Result<ProjectState> {
        self.import_archive(&Archive::read_dir(dir)?)
    }
}
