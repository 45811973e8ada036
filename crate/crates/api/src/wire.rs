//! Request and response bodies. Shared with clients.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use comodeler_core::archive::{Archive, Manifest};
use comodeler_core::game::{ClockKind, GameConfig};
use comodeler_core::trainer::TrainReport;
use comodeler_core::{BlobHash, ClassificationResult, LabelId, ModelVersion, TestSample, TrainingSample};
use serde::{Deserialize, Serialize};

/// Header carrying the opaque author id of the client.
pub const AUTHOR_HEADER: &str = "x-author";
pub const DEFAULT_AUTHOR: &str = "anonymous";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NameRequest {
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UploadResponse {
    pub sample: TrainingSample,
    /// False when the dedupe key matched an earlier upload.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub version: u64,
    pub label_ids: Vec<LabelId>,
    pub train_sample_count: usize,
    pub trained_at_ms: u64,
    pub report: TrainReport,
}

impl From<&ModelVersion> for ModelSummary {
    fn from(m: &ModelVersion) -> Self {
        ModelSummary {
            version: m.version,
            label_ids: m.label_ids.clone(),
            train_sample_count: m.train_sample_count,
            trained_at_ms: m.trained_at_ms,
            report: m.report.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassifyQuery {
    pub expected_label_id: Option<LabelId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub test_sample: TestSample,
    pub result: ClassificationResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpectedLabelRequest {
    pub label_id: Option<LabelId>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SinceQuery {
    #[serde(default)]
    pub since: u64,
}

/// One line of the live-classification request body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiveFrameJson {
    pub at_ms: u64,
    /// Base64 (standard alphabet) PNG or JPEG bytes.
    pub image: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StartGameRequest {
    pub seed: Option<u64>,
    pub duration_s: Option<u32>,
    pub round_s: Option<u32>,
    pub clock: Option<ClockKind>,
}

impl StartGameRequest {
    pub fn config(&self) -> GameConfig {
        let mut c = GameConfig::with_seed(self.seed.unwrap_or_else(GameConfig::random_seed));
        if let Some(d) = self.duration_s {
            c.duration_s = d;
        }
        if let Some(r) = self.round_s {
            c.round_s = r;
        }
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameQuery {
    pub round: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvanceRequest {
    pub ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HighScore {
    pub high_score: Option<f64>,
}

/// An exported project: the manifest plus base64 blobs keyed by hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveJson {
    pub manifest: Manifest,
    pub blobs: BTreeMap<BlobHash, String>,
}

impl From<&Archive> for ArchiveJson {
    fn from(a: &Archive) -> Self {
        ArchiveJson {
            manifest: a.manifest.clone(),
            blobs: a.blobs.iter().map(|(h, b)| (h.clone(), STANDARD.encode(b))).collect(),
        }
    }
}

impl ArchiveJson {
    pub fn into_archive(self) -> Result<Archive, base64::DecodeError> {
        let blobs = self
            .blobs
            .into_iter()
            .map(|(h, b)| Ok((h, STANDARD.decode(b)?)))
            .collect::<Result<_, base64::DecodeError>>()?;
        Ok(Archive { manifest: self.manifest, blobs })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}
