//! Restaurant Frenzy: a timed evaluation game.
//!
//! A session freezes the project's current model and runs back-to-back
//! rounds of `round_s` seconds until `duration_s` elapses (18 rounds of 5 s
//! by default). Each round has a target label drawn from the session RNG;
//! frames submitted during the round overwrite each other and the last one
//! is scored when the round ends: `10 * confidence(target)` if the model's
//! top label is the target, otherwise 0.
//!
//! Time comes from a per-session clock, either wall time or a simulated
//! clock that only moves when told to.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::{extract_features, FeatureVector};
use crate::ids::{GameId, LabelId, ProjectId};
use crate::project::ClassificationResult;
use crate::store::{write_atomic, Store};
use crate::trainer::{predict, ModelVersion};

pub const DEFAULT_DURATION_S: u32 = 90;
pub const DEFAULT_ROUND_S: u32 = 5;
pub const MAX_ROUND_SCORE: f64 = 10.0;

/// SplitMix64: a 64-bit state advanced by the golden-ratio increment
/// `0x9E3779B97F4A7C15`, output through the variant-13 finalizer
/// (`xor-shift 30, * 0xBF58476D1CE4E5B9, xor-shift 27, * 0x94D049BB133111EB,
/// xor-shift 31`).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `[0, n)`. Draws below `2^64 mod n` are rejected so
    /// every residue is equally likely.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }
}

/// Round score: `10 * confidence(target)` when the top label is the target,
/// 0 otherwise (including rounds with no frame).
pub fn score_round(end_result: Option<&ClassificationResult>, target: LabelId) -> f64 {
    match end_result {
        // Percent first, then tenths: 0.78 gives exactly 7.8 points.
        Some(r) if r.top_label_id == target => r.confidence(target) * 100.0 / 10.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub seed: u64,
    pub duration_s: u32,
    pub round_s: u32,
}

impl GameConfig {
    pub fn with_seed(seed: u64) -> Self {
        GameConfig { seed, duration_s: DEFAULT_DURATION_S, round_s: DEFAULT_ROUND_S }
    }

    /// A seed for callers that do not care about reproducing the session.
    pub fn random_seed() -> u64 {
        uuid::Uuid::new_v4().as_u64_pair().0
    }

    pub fn round_count(&self) -> u32 {
        self.duration_s / self.round_s
    }

    fn validate(&self) -> Result<()> {
        if self.round_s == 0 || self.duration_s < self.round_s {
            return Err(CoreError::InvalidGameConfig(format!(
                "need round_s >= 1 and duration_s >= round_s, got {}/{}",
                self.duration_s, self.round_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    #[default]
    Wall,
    Simulated,
}

#[derive(Debug, Clone)]
enum SessionClock {
    Wall(Instant),
    Simulated { elapsed_ms: u64 },
}

impl SessionClock {
    fn elapsed_ms(&self) -> u64 {
        match self {
            SessionClock::Wall(start) => start.elapsed().as_millis() as u64,
            SessionClock::Simulated { elapsed_ms } => *elapsed_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameState {
    Running,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRound {
    /// 1-based.
    pub index: u32,
    pub target_label_id: LabelId,
    pub end_result: Option<ClassificationResult>,
    pub score: f64,
    pub correct: bool,
}

/// The session engine. Pure apart from its clock.
#[derive(Debug, Clone)]
pub struct GameSession {
    pub id: GameId,
    pub project_id: ProjectId,
    pub config: GameConfig,
    pub model: Arc<ModelVersion>,
    pub label_names: BTreeMap<LabelId, String>,
    targets: Vec<LabelId>,
    rounds: Vec<GameRound>,
    pending: Option<ClassificationResult>,
    state: GameState,
    clock: SessionClock,
    high_score_recorded: bool,
}

impl GameSession {
    /// `pool` is the ordered set of labels targets are drawn from.
    pub fn new(
        project_id: ProjectId,
        model: Arc<ModelVersion>,
        pool: &[LabelId],
        label_names: BTreeMap<LabelId, String>,
        config: GameConfig,
        clock: ClockKind,
    ) -> Result<Self> {
        config.validate()?;
        if pool.len() < 2 {
            return Err(CoreError::InvalidGameConfig(format!(
                "need at least 2 live labels known to the model, found {}",
                pool.len()
            )));
        }
        let mut rng = SplitMix64::new(config.seed);
        let targets = (0..config.round_count())
            .map(|_| pool[rng.below(pool.len() as u64) as usize])
            .collect();
        let clock = match clock {
            ClockKind::Wall => SessionClock::Wall(Instant::now()),
            ClockKind::Simulated => SessionClock::Simulated { elapsed_ms: 0 },
        };
        Ok(GameSession {
            id: GameId::new(),
            project_id,
            config,
            model,
            label_names,
            targets,
            rounds: Vec::new(),
            pending: None,
            state: GameState::Running,
            clock,
            high_score_recorded: false,
        })
    }

    pub fn state(&self) -> GameState {
        self.state
    }

    pub fn rounds(&self) -> &[GameRound] {
        &self.rounds
    }

    pub fn targets(&self) -> &[LabelId] {
        &self.targets
    }

    pub fn total_score(&self) -> f64 {
        self.rounds.iter().map(|r| r.score).sum()
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.clock.elapsed_ms()
    }

    fn round_ms(&self) -> u64 {
        u64::from(self.config.round_s) * 1000
    }

    /// 1-based index of the round in progress.
    pub fn current_round(&self) -> Option<u32> {
        (self.state == GameState::Running && self.rounds.len() < self.targets.len())
            .then(|| self.rounds.len() as u32 + 1)
    }

    pub fn current_target(&self) -> Option<LabelId> {
        self.current_round().map(|i| self.targets[i as usize - 1])
    }

    /// Closes every round that ended by the clock's current time.
    pub fn tick(&mut self) {
        let now = self.clock.elapsed_ms();
        while self.rounds.len() < self.targets.len()
            && (self.rounds.len() as u64 + 1) * self.round_ms() <= now
        {
            self.close_round();
        }
        if now >= u64::from(self.config.duration_s) * 1000 {
            while self.rounds.len() < self.targets.len() {
                self.close_round();
            }
            self.state = GameState::Finished;
        }
    }

    fn close_round(&mut self) {
        let index = self.rounds.len() as u32 + 1;
        let target = self.targets[index as usize - 1];
        let end_result = self.pending.take();
        let score = score_round(end_result.as_ref(), target);
        let correct = end_result.as_ref().is_some_and(|r| r.top_label_id == target);
        self.rounds.push(GameRound { index, target_label_id: target, end_result, score, correct });
    }

    /// Moves a simulated clock forward.
    pub fn advance(&mut self, ms: u64) -> Result<()> {
        match &mut self.clock {
            SessionClock::Simulated { elapsed_ms } => *elapsed_ms += ms,
            SessionClock::Wall(_) => return Err(CoreError::NotSimulatedClock),
        }
        self.tick();
        Ok(())
    }

    /// Classifies a frame for the current round with the frozen model. The
    /// latest frame of a round is the one that gets scored.
    pub fn submit_features(
        &mut self,
        round_index: u32,
        features: &FeatureVector,
    ) -> Result<ClassificationResult> {
        self.tick();
        if self.state == GameState::Finished {
            return Err(CoreError::SessionFinished);
        }
        let current = self.current_round();
        if current != Some(round_index) {
            return Err(CoreError::StaleRound { requested: round_index, current });
        }
        let result = predict(&self.model, features)?;
        self.pending = Some(result.clone());
        Ok(result)
    }

    pub fn view(&self) -> GameView {
        GameView {
            id: self.id,
            project_id: self.project_id,
            model_version: self.model.version,
            config: self.config,
            state: self.state,
            elapsed_ms: self.elapsed_ms(),
            round_count: self.targets.len() as u32,
            current_round: self.current_round(),
            current_target: self.current_target(),
            current_target_name: self.current_target().and_then(|l| self.label_names.get(&l).cloned()),
            current_result: self.pending.clone(),
            completed_rounds: self.rounds.clone(),
            total_score: self.total_score(),
        }
    }

    pub fn summary(&self) -> Result<GameSummary> {
        if self.state != GameState::Finished {
            return Err(CoreError::SessionRunning);
        }
        let mut by_label: BTreeMap<LabelId, Vec<f64>> = BTreeMap::new();
        for r in &self.rounds {
            by_label.entry(r.target_label_id).or_default().push(r.score);
        }
        let name = |l: LabelId| self.label_names.get(&l).cloned().unwrap_or_else(|| l.to_string());
        let per_label = by_label
            .into_iter()
            .map(|(label_id, scores)| {
                let mean_fraction =
                    scores.iter().map(|s| s / MAX_ROUND_SCORE).sum::<f64>() / scores.len() as f64;
                LabelAverage {
                    label_id,
                    name: name(label_id),
                    rounds: scores.len(),
                    average_confidence_pct: mean_fraction * 100.0,
                }
            })
            .collect();
        let rounds = self
            .rounds
            .iter()
            .map(|r| RoundDetail {
                index: r.index,
                target_label_id: r.target_label_id,
                target_name: name(r.target_label_id),
                top_label_id: r.end_result.as_ref().map(|e| e.top_label_id),
                top_name: r.end_result.as_ref().map(|e| name(e.top_label_id)),
                target_confidence: r.end_result.as_ref().map(|e| e.confidence(r.target_label_id)),
                score: r.score,
                correct: r.correct,
            })
            .collect();
        Ok(GameSummary {
            session_id: self.id,
            model_version: self.model.version,
            total_score: self.total_score(),
            per_label,
            rounds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameView {
    pub id: GameId,
    pub project_id: ProjectId,
    pub model_version: u64,
    pub config: GameConfig,
    pub state: GameState,
    pub elapsed_ms: u64,
    pub round_count: u32,
    pub current_round: Option<u32>,
    pub current_target: Option<LabelId>,
    pub current_target_name: Option<String>,
    pub current_result: Option<ClassificationResult>,
    pub completed_rounds: Vec<GameRound>,
    pub total_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAverage {
    pub label_id: LabelId,
    pub name: String,
    pub rounds: usize,
    /// Mean of `score / 10` over rounds targeting the label, as a percentage.
    pub average_confidence_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDetail {
    pub index: u32,
    pub target_label_id: LabelId,
    pub target_name: String,
    pub top_label_id: Option<LabelId>,
    pub top_name: Option<String>,
    pub target_confidence: Option<f64>,
    pub score: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSummary {
    pub session_id: GameId,
    pub model_version: u64,
    pub total_score: f64,
    pub per_label: Vec<LabelAverage>,
    pub rounds: Vec<RoundDetail>,
}

#[derive(Default)]
pub(crate) struct GameRegistry {
    sessions: Mutex<HashMap<GameId, Arc<Mutex<GameSession>>>>,
}

/// Per-project game bookkeeping. The two locks are never held together.
#[derive(Default)]
pub(crate) struct ProjectGames {
    active: Mutex<Option<GameId>>,
    high_score: Mutex<Option<f64>>,
    path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct HighScoreFile {
    high_score: f64,
}

impl ProjectGames {
    pub(crate) fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("highscore.json");
        let high_score = match std::fs::read(&path) {
            Ok(bytes) => Some(serde_json::from_slice::<HighScoreFile>(&bytes)?.high_score),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        Ok(ProjectGames { active: Mutex::new(None), high_score: Mutex::new(high_score), path: Some(path) })
    }

    pub(crate) fn with_dir(dir: Option<&Path>) -> Self {
        ProjectGames { path: dir.map(|d| d.join("highscore.json")), ..Default::default() }
    }

    fn record(&self, score: f64) -> Result<()> {
        let mut best = self.high_score.lock();
        if best.is_none_or(|b| score > b) {
            *best = Some(score);
            if let Some(path) = &self.path {
                write_atomic(path, &serde_json::to_vec(&HighScoreFile { high_score: score })?)?;
            }
        }
        Ok(())
    }
}

impl Store {
    pub fn start_game(&self, project: ProjectId, config: GameConfig, clock: ClockKind) -> Result<GameView> {
        let handle = self.handle(project)?;
        let (model, pool, names) = {
            let inner = handle.inner.read();
            let model = inner.model.clone().ok_or(CoreError::NoModel)?;
            let pool: Vec<LabelId> = inner
                .state
                .live_labels()
                .map(|l| l.id)
                .filter(|l| model.label_ids.contains(l))
                .collect();
            let names = inner.state.labels.iter().map(|l| (l.id, l.name.clone())).collect();
            (model, pool, names)
        };
        let mut active = handle.games.active.lock();
        if let Some(prev) = *active {
            if let Some(s) = self.games.sessions.lock().get(&prev).cloned() {
                let mut s = s.lock();
                s.tick();
                if s.state() == GameState::Running {
                    return Err(CoreError::GameInProgress);
                }
            }
        }
        let session = GameSession::new(project, model, &pool, names, config, clock)?;
        let view = session.view();
        self.games.sessions.lock().insert(session.id, Arc::new(Mutex::new(session)));
        *active = Some(view.id);
        Ok(view)
    }

    fn session(&self, id: GameId) -> Result<Arc<Mutex<GameSession>>> {
        self.games.sessions.lock().get(&id).cloned().ok_or(CoreError::GameNotFound(id))
    }

    fn after_tick(&self, session: &mut GameSession) -> Result<()> {
        if session.state() == GameState::Finished && !session.high_score_recorded {
            session.high_score_recorded = true;
            if let Ok(handle) = self.handle(session.project_id) {
                handle.games.record(session.total_score())?;
            }
        }
        Ok(())
    }

    pub fn game(&self, id: GameId) -> Result<GameView> {
        let session = self.session(id)?;
        let mut s = session.lock();
        s.tick();
        self.after_tick(&mut s)?;
        Ok(s.view())
    }

    pub fn game_submit_frame(&self, id: GameId, round_index: u32, image: &[u8]) -> Result<ClassificationResult> {
        let session = self.session(id)?;
        let features = extract_features(image)?;
        let mut s = session.lock();
        let out = s.submit_features(round_index, &features);
        self.after_tick(&mut s)?;
        out
    }

    pub fn game_advance(&self, id: GameId, ms: u64) -> Result<GameView> {
        let session = self.session(id)?;
        let mut s = session.lock();
        s.advance(ms)?;
        self.after_tick(&mut s)?;
        Ok(s.view())
    }

    pub fn game_summary(&self, id: GameId) -> Result<GameSummary> {
        let session = self.session(id)?;
        let mut s = session.lock();
        s.tick();
        self.after_tick(&mut s)?;
        s.summary()
    }

    pub fn high_score(&self, project: ProjectId) -> Result<Option<f64>> {
        Ok(*self.handle(project)?.games.high_score.lock())
    }
}
