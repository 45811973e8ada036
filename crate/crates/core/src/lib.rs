//! Core of a collaborative image-classifier workbench.
//!
//! A [`Store`] holds projects. Each project is a label ontology plus
//! training and test images, mutated only through an append-only, server
//! ordered event log that clients replicate ([`sync`]). Images become
//! fixed-length [`FeatureVector`]s ([`features`]), a softmax head is trained
//! over them ([`trainer`]), and the resulting model backs photo and live
//! classification ([`classify`]) and the timed evaluation game ([`game`]).

pub mod archive;
pub mod blob;
pub mod classify;
pub mod error;
pub mod event;
pub mod features;
pub mod game;
pub mod ids;
pub mod project;
pub mod store;
pub mod sync;
pub mod synth;
pub mod trainer;

pub use error::{CoreError, Result};
pub use event::{EventDraft, EventKind, EventPayload, EventRecord, ModelRef};
pub use features::{extract_features, FeatureVector, RgbImage, FEATURE_DIM};
pub use ids::{BlobHash, GameId, LabelId, ProjectId, SampleId, TestSampleId};
pub use project::{
    ClassificationResult, DatasetReport, Label, LabelCount, ProjectState, TestSample,
    TrainingSample,
};
pub use store::{ProjectSummary, Store};
pub use trainer::{ModelVersion, TrainConfig};
