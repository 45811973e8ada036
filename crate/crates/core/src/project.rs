//! Project state and the event application rules.
//!
//! [`ProjectState::apply`] is the only way state changes. The server, client
//! replicas and archive import all go through it, so replaying a log always
//! lands on the same state the server holds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::event::{EventPayload, EventRecord, ModelRef};
use crate::ids::{BlobHash, LabelId, ProjectId, SampleId, TestSampleId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: LabelId,
    pub name: String,
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub id: SampleId,
    pub label_id: LabelId,
    pub image_ref: BlobHash,
    pub author: String,
    pub added_at_ms: u64,
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSample {
    pub id: TestSampleId,
    pub image_ref: BlobHash,
    pub expected_label_id: Option<LabelId>,
    pub latest_result: Option<ClassificationResult>,
    pub latest_model_version: Option<u64>,
    pub author: String,
    pub added_at_ms: u64,
    pub deleted: bool,
}

/// Output of the classifier for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    /// Confidence per label; keys are the model's labels.
    pub distribution: BTreeMap<LabelId, f64>,
    pub top_label_id: LabelId,
    pub top_confidence: f64,
    /// Only defined when the sample has a (live) expected label.
    pub correct: Option<bool>,
}

impl ClassificationResult {
    /// Builds a result from a distribution; the top label is the maximum
    /// confidence with ties going to the lowest label id.
    pub fn from_distribution(distribution: BTreeMap<LabelId, f64>) -> Option<Self> {
        let mut top: Option<(LabelId, f64)> = None;
        for (&id, &p) in &distribution {
            match top {
                Some((_, best)) if p <= best => {}
                _ => top = Some((id, p)),
            }
        }
        let (top_label_id, top_confidence) = top?;
        Some(ClassificationResult { distribution, top_label_id, top_confidence, correct: None })
    }

    pub fn confidence(&self, label: LabelId) -> f64 {
        self.distribution.get(&label).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub id: ProjectId,
    pub name: String,
    pub created_at_ms: u64,
    pub head_seq: u64,
    /// Creation order.
    pub labels: Vec<Label>,
    pub samples: BTreeMap<SampleId, TrainingSample>,
    pub test_samples: BTreeMap<TestSampleId, TestSample>,
    pub current_model: Option<ModelRef>,
    pub dedupe_keys: BTreeMap<String, SampleId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label_id: LabelId,
    pub name: String,
    pub count: usize,
}

/// Live sample counts per live label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub labels: Vec<LabelCount>,
    pub total: usize,
    /// Largest over smallest count; absent with fewer than two labels or
    /// when some label has no samples.
    pub imbalance_ratio: Option<f64>,
}

impl DatasetReport {
    pub fn count_for(&self, name: &str) -> Option<usize> {
        self.labels.iter().find(|l| l.name == name).map(|l| l.count)
    }
}

pub(crate) fn validate_name(name: &str) -> Result<&str> {
    let trimmed = name.trim();
    if trimmed.is_empty() {
        return Err(CoreError::InvalidName("name must not be empty".into()));
    }
    Ok(trimmed)
}

impl ProjectState {
    pub fn new(id: ProjectId, name: impl Into<String>, created_at_ms: u64) -> Self {
        ProjectState {
            id,
            name: name.into(),
            created_at_ms,
            head_seq: 0,
            labels: Vec::new(),
            samples: BTreeMap::new(),
            test_samples: BTreeMap::new(),
            current_model: None,
            dedupe_keys: BTreeMap::new(),
        }
    }

    pub fn label(&self, id: LabelId) -> Option<&Label> {
        self.labels.iter().find(|l| l.id == id)
    }

    pub fn live_labels(&self) -> impl Iterator<Item = &Label> {
        self.labels.iter().filter(|l| !l.deleted)
    }

    pub fn live_label_by_name(&self, name: &str) -> Option<&Label> {
        self.live_labels().find(|l| l.name == name)
    }

    fn live_label(&self, id: LabelId) -> Result<&Label> {
        match self.label(id) {
            None => Err(CoreError::LabelNotFound(id)),
            Some(l) if l.deleted => Err(CoreError::LabelDeleted(id)),
            Some(l) => Ok(l),
        }
    }

    /// Training samples that are live and whose label is live, in id order.
    pub fn live_samples(&self) -> impl Iterator<Item = &TrainingSample> {
        self.samples.values().filter(move |s| {
            !s.deleted && self.label(s.label_id).is_some_and(|l| !l.deleted)
        })
    }

    pub fn live_test_samples(&self) -> impl Iterator<Item = &TestSample> {
        self.test_samples.values().filter(|t| !t.deleted)
    }

    pub fn dataset_report(&self) -> DatasetReport {
        let mut counts: BTreeMap<LabelId, usize> =
            self.live_labels().map(|l| (l.id, 0)).collect();
        for s in self.live_samples() {
            *counts.get_mut(&s.label_id).expect("live sample has live label") += 1;
        }
        let labels: Vec<LabelCount> = self
            .live_labels()
            .map(|l| LabelCount { label_id: l.id, name: l.name.clone(), count: counts[&l.id] })
            .collect();
        let total = labels.iter().map(|l| l.count).sum();
        let imbalance_ratio = if labels.len() >= 2 {
            let max = labels.iter().map(|l| l.count).max().unwrap_or(0);
            let min = labels.iter().map(|l| l.count).min().unwrap_or(0);
            (min > 0).then(|| max as f64 / min as f64)
        } else {
            None
        };
        DatasetReport { labels, total, imbalance_ratio }
    }

    /// Checks an event payload against the current state without mutating.
    pub fn validate(&self, payload: &EventPayload) -> Result<()> {
        match payload {
            EventPayload::LabelAdded { name } => {
                let name = validate_name(name)?;
                if self.live_label_by_name(name).is_some() {
                    return Err(CoreError::LabelNameConflict(name.to_owned()));
                }
            }
            EventPayload::LabelRenamed { label_id, name } => {
                self.live_label(*label_id)?;
                let name = validate_name(name)?;
                if let Some(other) = self.live_label_by_name(name) {
                    if other.id != *label_id {
                        return Err(CoreError::LabelNameConflict(name.to_owned()));
                    }
                }
            }
            EventPayload::LabelDeleted { label_id } => {
                if self.label(*label_id).is_none() {
                    return Err(CoreError::LabelNotFound(*label_id));
                }
            }
            EventPayload::SampleAdded { label_id, dedupe_key, .. } => {
                self.live_label(*label_id)?;
                if let Some(key) = dedupe_key {
                    if self.dedupe_keys.contains_key(key) {
                        return Err(CoreError::InvalidEvent(format!(
                            "dedupe key {key:?} already used"
                        )));
                    }
                }
            }
            EventPayload::SampleDeleted { sample_id } => {
                if !self.samples.contains_key(sample_id) {
                    return Err(CoreError::SampleNotFound(*sample_id));
                }
            }
            EventPayload::TestSampleAdded { expected_label_id, result, model_version, .. } => {
                if let Some(l) = expected_label_id {
                    self.live_label(*l)?;
                }
                match (result, model_version) {
                    (None, None) => {}
                    (Some(r), Some(v)) => {
                        let current = self.current_model.as_ref().ok_or(CoreError::NoModel)?;
                        if current.version != *v {
                            return Err(CoreError::InvalidEvent(format!(
                                "result from model {v} but current model is {}",
                                current.version
                            )));
                        }
                        check_result_labels(r, &current.label_ids)?;
                    }
                    _ => {
                        return Err(CoreError::InvalidEvent(
                            "result and model_version must be given together".into(),
                        ))
                    }
                }
            }
            EventPayload::TestSampleDeleted { test_sample_id } => {
                if !self.test_samples.contains_key(test_sample_id) {
                    return Err(CoreError::TestSampleNotFound(*test_sample_id));
                }
            }
            EventPayload::ExpectedLabelSet { test_sample_id, label_id } => {
                match self.test_samples.get(test_sample_id) {
                    None => return Err(CoreError::TestSampleNotFound(*test_sample_id)),
                    Some(t) if t.deleted => {
                        return Err(CoreError::TestSampleDeleted(*test_sample_id))
                    }
                    Some(_) => {}
                }
                if let Some(l) = label_id {
                    self.live_label(*l)?;
                }
            }
            EventPayload::ModelTrained { model, results } => {
                let expected_version = self.current_model.as_ref().map_or(1, |m| m.version + 1);
                if model.version != expected_version {
                    return Err(CoreError::InvalidEvent(format!(
                        "model version {} does not follow {}",
                        model.version,
                        expected_version - 1
                    )));
                }
                if model.label_ids.len() < 2 {
                    return Err(CoreError::InvalidEvent("model needs at least 2 labels".into()));
                }
                for l in &model.label_ids {
                    if self.label(*l).is_none() {
                        return Err(CoreError::LabelNotFound(*l));
                    }
                }
                let live: Vec<TestSampleId> = self.live_test_samples().map(|t| t.id).collect();
                let covered: Vec<TestSampleId> = results.iter().map(|r| r.test_sample_id).collect();
                if live != covered {
                    return Err(CoreError::InvalidEvent(
                        "re-classification must cover every live test sample in id order".into(),
                    ));
                }
                for r in results {
                    check_result_labels(&r.result, &model.label_ids)?;
                }
            }
        }
        Ok(())
    }

    /// Validates and applies one ordered record.
    pub fn apply(&mut self, record: &EventRecord) -> Result<()> {
        if record.seq != self.head_seq + 1 {
            return Err(CoreError::EventGap { expected: self.head_seq + 1, got: record.seq });
        }
        if record.project_id != self.id {
            return Err(CoreError::InvalidEvent("event belongs to another project".into()));
        }
        self.validate(&record.payload)?;
        self.mutate(record);
        self.head_seq = record.seq;
        Ok(())
    }

    fn mutate(&mut self, record: &EventRecord) {
        match &record.payload {
            EventPayload::LabelAdded { name } => {
                self.labels.push(Label {
                    id: LabelId(record.seq),
                    name: name.trim().to_owned(),
                    deleted: false,
                });
            }
            EventPayload::LabelRenamed { label_id, name } => {
                if let Some(l) = self.labels.iter_mut().find(|l| l.id == *label_id) {
                    l.name = name.trim().to_owned();
                }
            }
            EventPayload::LabelDeleted { label_id } => {
                if let Some(l) = self.labels.iter_mut().find(|l| l.id == *label_id) {
                    l.deleted = true;
                }
                self.refresh_verdicts();
            }
            EventPayload::SampleAdded { label_id, image_ref, dedupe_key } => {
                let id = SampleId(record.seq);
                self.samples.insert(
                    id,
                    TrainingSample {
                        id,
                        label_id: *label_id,
                        image_ref: image_ref.clone(),
                        author: record.author.clone(),
                        added_at_ms: record.server_time_ms,
                        deleted: false,
                    },
                );
                if let Some(key) = dedupe_key {
                    self.dedupe_keys.insert(key.clone(), id);
                }
            }
            EventPayload::SampleDeleted { sample_id } => {
                if let Some(s) = self.samples.get_mut(sample_id) {
                    s.deleted = true;
                }
            }
            EventPayload::TestSampleAdded { image_ref, expected_label_id, result, model_version } => {
                let id = TestSampleId(record.seq);
                self.test_samples.insert(
                    id,
                    TestSample {
                        id,
                        image_ref: image_ref.clone(),
                        expected_label_id: *expected_label_id,
                        latest_result: result.clone(),
                        latest_model_version: *model_version,
                        author: record.author.clone(),
                        added_at_ms: record.server_time_ms,
                        deleted: false,
                    },
                );
                self.refresh_verdicts();
            }
            EventPayload::TestSampleDeleted { test_sample_id } => {
                if let Some(t) = self.test_samples.get_mut(test_sample_id) {
                    t.deleted = true;
                }
            }
            EventPayload::ExpectedLabelSet { test_sample_id, label_id } => {
                if let Some(t) = self.test_samples.get_mut(test_sample_id) {
                    t.expected_label_id = *label_id;
                }
                self.refresh_verdicts();
            }
            EventPayload::ModelTrained { model, results } => {
                for r in results {
                    if let Some(t) = self.test_samples.get_mut(&r.test_sample_id) {
                        t.latest_result = Some(r.result.clone());
                        t.latest_model_version = Some(model.version);
                    }
                }
                self.current_model = Some(model.clone());
                self.refresh_verdicts();
            }
        }
    }

    /// Recomputes `correct` on every test result. A sample whose expected
    /// label is unset or deleted has an undefined verdict.
    fn refresh_verdicts(&mut self) {
        let live: std::collections::BTreeSet<LabelId> =
            self.labels.iter().filter(|l| !l.deleted).map(|l| l.id).collect();
        for t in self.test_samples.values_mut() {
            let expected = t.expected_label_id.filter(|l| live.contains(l));
            if let Some(r) = t.latest_result.as_mut() {
                r.correct = expected.map(|e| r.top_label_id == e);
            }
        }
    }

    /// Replays a full log from an empty project.
    pub fn replay<'a>(
        id: ProjectId,
        name: impl Into<String>,
        created_at_ms: u64,
        events: impl IntoIterator<Item = &'a EventRecord>,
    ) -> Result<Self> {
        let mut state = ProjectState::new(id, name, created_at_ms);
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    /// SHA-256 over the canonical JSON encoding of the state.
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn check_result_labels(result: &ClassificationResult, label_ids: &[LabelId]) -> Result<()> {
    let keys: Vec<LabelId> = result.distribution.keys().copied().collect();
    let mut expected = label_ids.to_vec();
    expected.sort();
    if keys != expected || !result.distribution.contains_key(&result.top_label_id) {
        return Err(CoreError::InvalidEvent("result labels do not match the model".into()));
    }
    Ok(())
}
