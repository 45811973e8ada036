//! Event records: the unit of mutation, persistence and synchronization.

use serde::{Deserialize, Serialize};

use crate::ids::{BlobHash, LabelId, ProjectId, SampleId, TestSampleId};
use crate::project::ClassificationResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    LabelAdded,
    LabelRenamed,
    LabelDeleted,
    SampleAdded,
    SampleDeleted,
    TestSampleAdded,
    TestSampleDeleted,
    ExpectedLabelSet,
    ModelTrained,
}

/// Reference to a trained model as recorded in the log. The full parameters
/// live in the blob store under `model_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub version: u64,
    pub model_ref: BlobHash,
    pub label_ids: Vec<LabelId>,
    pub train_sample_count: usize,
    pub trained_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reclassification {
    pub test_sample_id: TestSampleId,
    pub result: ClassificationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventPayload {
    LabelAdded {
        name: String,
    },
    LabelRenamed {
        label_id: LabelId,
        name: String,
    },
    LabelDeleted {
        label_id: LabelId,
    },
    SampleAdded {
        label_id: LabelId,
        image_ref: BlobHash,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dedupe_key: Option<String>,
    },
    SampleDeleted {
        sample_id: SampleId,
    },
    TestSampleAdded {
        image_ref: BlobHash,
        #[serde(default)]
        expected_label_id: Option<LabelId>,
        #[serde(default)]
        result: Option<ClassificationResult>,
        #[serde(default)]
        model_version: Option<u64>,
    },
    TestSampleDeleted {
        test_sample_id: TestSampleId,
    },
    ExpectedLabelSet {
        test_sample_id: TestSampleId,
        label_id: Option<LabelId>,
    },
    ModelTrained {
        model: ModelRef,
        results: Vec<Reclassification>,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::LabelAdded { .. } => EventKind::LabelAdded,
            EventPayload::LabelRenamed { .. } => EventKind::LabelRenamed,
            EventPayload::LabelDeleted { .. } => EventKind::LabelDeleted,
            EventPayload::SampleAdded { .. } => EventKind::SampleAdded,
            EventPayload::SampleDeleted { .. } => EventKind::SampleDeleted,
            EventPayload::TestSampleAdded { .. } => EventKind::TestSampleAdded,
            EventPayload::TestSampleDeleted { .. } => EventKind::TestSampleDeleted,
            EventPayload::ExpectedLabelSet { .. } => EventKind::ExpectedLabelSet,
            EventPayload::ModelTrained { .. } => EventKind::ModelTrained,
        }
    }

    /// Blobs this event needs to be resolvable.
    pub fn blob_refs(&self) -> Vec<&BlobHash> {
        match self {
            EventPayload::SampleAdded { image_ref, .. }
            | EventPayload::TestSampleAdded { image_ref, .. } => vec![image_ref],
            EventPayload::ModelTrained { model, .. } => vec![&model.model_ref],
            _ => Vec::new(),
        }
    }
}

/// A mutation as submitted by a client, before the server orders it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDraft {
    pub author: String,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl EventDraft {
    pub fn new(author: impl Into<String>, payload: EventPayload) -> Self {
        EventDraft { author: author.into(), payload }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub project_id: ProjectId,
    pub author: String,
    pub server_time_ms: u64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl EventRecord {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_wire_shape_is_flat() {
        let rec = EventRecord {
            seq: 1,
            project_id: ProjectId::new(),
            author: "ipad-1".into(),
            server_time_ms: 42,
            payload: EventPayload::LabelAdded { name: "Banana".into() },
        };
        let v = serde_json::to_value(&rec).unwrap();
        assert_eq!(v["kind"], "LabelAdded");
        assert_eq!(v["payload"]["name"], "Banana");
        assert_eq!(v["seq"], 1);
        let back: EventRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn classification_results_survive_the_flattened_record() {
        let result = crate::project::ClassificationResult::from_distribution(
            [(LabelId(1), 0.25), (LabelId(4), 0.75)].into_iter().collect(),
        )
        .unwrap();
        let rec = EventRecord {
            seq: 9,
            project_id: ProjectId::new(),
            author: "a".into(),
            server_time_ms: 1,
            payload: EventPayload::TestSampleAdded {
                image_ref: BlobHash::of(b"x"),
                expected_label_id: Some(LabelId(4)),
                result: Some(result),
                model_version: Some(1),
            },
        };
        let line = serde_json::to_string(&rec).unwrap();
        let back: EventRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }
}
