//! Photo-mode and live-mode classification, and the test dashboard.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event::{EventDraft, EventPayload};
use crate::features::extract_features;
use crate::ids::{LabelId, ProjectId, TestSampleId};
use crate::project::{ClassificationResult, ProjectState, TestSample};
use crate::store::{ProjectHandle, Store};
use crate::trainer::predict;

/// Minimum spacing of live results (5 per second).
pub const LIVE_MIN_INTERVAL_MS: u64 = 200;

impl Store {
    /// Classifies a photo with the current model and keeps it as test data.
    pub fn photo_classify(
        &self,
        id: ProjectId,
        image: &[u8],
        author: &str,
        expected_label_id: Option<LabelId>,
    ) -> Result<(TestSample, ClassificationResult)> {
        let handle = self.handle(id)?;
        if handle.inner.read().model.is_none() {
            return Err(CoreError::NoModel);
        }
        let image_ref = self.put_image(image)?;
        let features = self.features_for(&image_ref)?;
        let mut inner = handle.inner.write();
        let model = inner.model.clone().ok_or(CoreError::NoModel)?;
        let result = predict(&model, &features)?;
        let rec = self.append(
            &mut inner,
            EventDraft::new(
                author,
                EventPayload::TestSampleAdded {
                    image_ref,
                    expected_label_id,
                    result: Some(result),
                    model_version: Some(model.version),
                },
            ),
        )?;
        let sample = inner.state.test_samples[&TestSampleId(rec.seq)].clone();
        let result = sample.latest_result.clone().expect("just classified");
        Ok((sample, result))
    }

    pub fn set_expected_label(
        &self,
        id: ProjectId,
        test_sample_id: TestSampleId,
        label_id: Option<LabelId>,
        author: &str,
    ) -> Result<TestSample> {
        let handle = self.handle(id)?;
        let mut inner = handle.inner.write();
        self.append(
            &mut inner,
            EventDraft::new(author, EventPayload::ExpectedLabelSet { test_sample_id, label_id }),
        )?;
        Ok(inner.state.test_samples[&test_sample_id].clone())
    }

    pub fn test_dashboard(&self, id: ProjectId) -> Result<Vec<TestSampleView>> {
        Ok(test_dashboard(&self.handle(id)?.inner.read().state))
    }

    /// Starts a live classification session against the project's model.
    pub fn live_session(&self, id: ProjectId) -> Result<LiveSession> {
        let handle = self.handle(id)?;
        if handle.inner.read().model.is_none() {
            return Err(CoreError::NoModel);
        }
        Ok(LiveSession { handle, throttle: Throttle::new(LIVE_MIN_INTERVAL_MS) })
    }

    /// Classifies a frame stream, emitting at most one result per 200 ms of
    /// frame time. Frames are never stored.
    pub fn live_classify<I>(
        &self,
        id: ProjectId,
        frames: I,
    ) -> Result<impl Iterator<Item = Result<LiveResult>>>
    where
        I: IntoIterator<Item = LiveFrame>,
    {
        let mut session = self.live_session(id)?;
        Ok(frames.into_iter().filter_map(move |f| session.push(&f).transpose()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveFrame {
    /// Capture time relative to the start of the stream.
    pub at_ms: u64,
    pub image: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveResult {
    pub at_ms: u64,
    pub model_version: u64,
    pub result: ClassificationResult,
}

#[derive(Debug, Clone, Copy)]
pub struct Throttle {
    min_interval_ms: u64,
    last: Option<u64>,
}

impl Throttle {
    pub fn new(min_interval_ms: u64) -> Self {
        Throttle { min_interval_ms, last: None }
    }

    pub fn admit(&mut self, at_ms: u64) -> bool {
        match self.last {
            Some(last) if at_ms < last.saturating_add(self.min_interval_ms) => false,
            _ => {
                self.last = Some(at_ms);
                true
            }
        }
    }
}

pub struct LiveSession {
    handle: Arc<ProjectHandle>,
    throttle: Throttle,
}

impl LiveSession {
    /// Returns `None` for frames dropped by the throttle.
    pub fn push(&mut self, frame: &LiveFrame) -> Result<Option<LiveResult>> {
        if !self.throttle.admit(frame.at_ms) {
            return Ok(None);
        }
        let features = extract_features(&frame.image)?;
        // Take the model snapshot per frame: a retrain swaps it between frames.
        let model = self.handle.inner.read().model.clone().ok_or(CoreError::NoModel)?;
        let result = predict(&model, &features)?;
        Ok(Some(LiveResult { at_ms: frame.at_ms, model_version: model.version, result }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Badge {
    Cross,
    Check,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSampleView {
    pub sample: TestSample,
    pub badge: Badge,
}

/// Live test samples, misclassified first, then correct, then those without
/// a verdict; newest first within each group.
pub fn test_dashboard(state: &ProjectState) -> Vec<TestSampleView> {
    let mut views: Vec<TestSampleView> = state
        .live_test_samples()
        .map(|t| {
            let badge = match t.latest_result.as_ref().and_then(|r| r.correct) {
                Some(false) => Badge::Cross,
                Some(true) => Badge::Check,
                None => Badge::None,
            };
            TestSampleView { sample: t.clone(), badge }
        })
        .collect();
    let group = |b: Badge| match b {
        Badge::Cross => 0,
        Badge::Check => 1,
        Badge::None => 2,
    };
    views.sort_by(|a, b| {
        group(a.badge)
            .cmp(&group(b.badge))
            .then_with(|| b.sample.id.cmp(&a.sample.id))
    });
    views
}
