use crate::ids::{BlobHash, GameId, LabelId, ProjectId, SampleId, TestSampleId};

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid name: {0}")]
    InvalidName(String),
    #[error("a project named {0:?} already exists")]
    DuplicateProjectName(String),
    #[error("project {0} not found")]
    ProjectNotFound(ProjectId),
    #[error("project {0} already exists")]
    DuplicateProjectId(ProjectId),
    #[error("label {0} not found")]
    LabelNotFound(LabelId),
    #[error("label {0} is deleted")]
    LabelDeleted(LabelId),
    #[error("a live label named {0:?} already exists")]
    LabelNameConflict(String),
    #[error("training sample {0} not found")]
    SampleNotFound(SampleId),
    #[error("test sample {0} not found")]
    TestSampleNotFound(TestSampleId),
    #[error("test sample {0} is deleted")]
    TestSampleDeleted(TestSampleId),
    #[error("rejected event: {0}")]
    InvalidEvent(String),

    #[error("blob {0} not found")]
    BlobNotFound(BlobHash),
    #[error("blob {expected} is corrupt (content hashes to {actual})")]
    BlobCorrupt { expected: BlobHash, actual: BlobHash },
    #[error("image could not be decoded: {0}")]
    ImageDecode(String),
    #[error("image has a zero dimension")]
    EmptyImage,

    #[error("training needs at least 2 live labels with samples, found {eligible}")]
    TrainingPrerequisite { eligible: usize },
    #[error("a training run is already in progress for this project")]
    TrainingInProgress,
    #[error("the project has no trained model")]
    NoModel,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cursor {cursor} is ahead of head {head}")]
    CursorAhead { cursor: u64, head: u64 },
    #[error("event gap: expected seq {expected}, got {got}")]
    EventGap { expected: u64, got: u64 },

    #[error("game {0} not found")]
    GameNotFound(GameId),
    #[error("a game is already running for this project")]
    GameInProgress,
    #[error("round {requested} is not the current round ({current:?})")]
    StaleRound { requested: u32, current: Option<u32> },
    #[error("game session has finished")]
    SessionFinished,
    #[error("game session is still running")]
    SessionRunning,
    #[error("game session does not use a simulated clock")]
    NotSimulatedClock,
    #[error("invalid game settings: {0}")]
    InvalidGameConfig(String),

    #[error("archive error: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        use CoreError::*;
        match self {
            InvalidName(_) => "InvalidName",
            DuplicateProjectName(_) => "DuplicateProjectName",
            ProjectNotFound(_) => "ProjectNotFound",
            DuplicateProjectId(_) => "DuplicateProjectId",
            LabelNotFound(_) => "LabelNotFound",
            LabelDeleted(_) => "LabelDeleted",
            LabelNameConflict(_) => "LabelNameConflict",
            SampleNotFound(_) => "SampleNotFound",
            TestSampleNotFound(_) => "TestSampleNotFound",
            TestSampleDeleted(_) => "TestSampleDeleted",
            InvalidEvent(_) => "InvalidEvent",
            BlobNotFound(_) => "BlobNotFound",
            BlobCorrupt { .. } => "BlobCorrupt",
            ImageDecode(_) => "ImageDecodeError",
            EmptyImage => "EmptyImage",
            TrainingPrerequisite { .. } => "TrainingPrerequisiteError",
            TrainingInProgress => "TrainingInProgressError",
            NoModel => "NoModelError",
            DimensionMismatch { .. } => "DimensionMismatch",
            CursorAhead { .. } => "CursorAhead",
            EventGap { .. } => "EventGap",
            GameNotFound(_) => "GameNotFound",
            GameInProgress => "GameInProgress",
            StaleRound { .. } => "StaleRound",
            SessionFinished => "SessionFinished",
            SessionRunning => "SessionRunning",
            NotSimulatedClock => "NotSimulatedClock",
            InvalidGameConfig(_) => "InvalidGameConfig",
            Archive(_) => "ArchiveError",
            Io(_) => "IoError",
            Json(_) => "JsonError",
        }
    }
}
