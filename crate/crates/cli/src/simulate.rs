//! Headless game: shows a scripted image for every target on a simulated clock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use comodeler_api::wire::{AdvanceRequest, StartGameRequest};
use comodeler_core::game::{ClockKind, GameState, GameSummary, GameView, LabelAverage, SplitMix64};
use comodeler_core::ClassificationResult;
use serde::Serialize;

use crate::client::Client;
use crate::error::CliError;

/// Separates the frame-choice stream from the target stream of the same seed.
const FRAME_STREAM: u64 = 0x6A09_E667_F3BC_C908;

/// Label name to the image files shown when that label is the target.
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Default)]
pub struct FrameManifest {
    pub pools: BTreeMap<String, Vec<PathBuf>>,
}

impl FrameManifest {
    /// Reads a JSON (`.json`) or TOML (anything else) table of
    /// `label = ["file", ...]`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let raw: BTreeMap<String, Vec<PathBuf>> = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let pools = raw
            .into_iter()
            .map(|(label, files)| (label, files.into_iter().map(|f| base.join(f)).collect()))
            .collect();
        Ok(FrameManifest { pools })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundRow {
    pub index: u32,
    pub target: String,
    pub shown: Option<PathBuf>,
    pub top: Option<String>,
    pub target_confidence: Option<f64>,
    pub score: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub game_id: String,
    pub seed: u64,
    pub model_version: u64,
    pub total_score: f64,
    pub max_score: f64,
    pub per_label: Vec<LabelAverage>,
    pub rounds: Vec<RoundRow>,
    pub warnings: Vec<String>,
}

pub struct SimulateOptions {
    pub seed: Option<u64>,
    pub duration_s: Option<u32>,
    pub round_s: Option<u32>,
}

pub fn simulate(
    client: &Client,
    project: &str,
    manifest: &FrameManifest,
    opts: &SimulateOptions,
    mut warn: impl FnMut(&str),
) -> Result<SimulationReport, CliError> {
    let state = client.project(project)?;
    let pid = state.id;
    let mut warnings = Vec::new();
    let mut note = |msg: String| {
        warn(&msg);
        warnings.push(msg);
    };

    let mut images: BTreeMap<&str, Vec<(PathBuf, Vec<u8>)>> = BTreeMap::new();
    for (label, files) in &manifest.pools {
        if !state.live_labels().any(|l| &l.name == label) {
            note(format!("manifest label {label:?} is not a label of the project"));
        }
        let mut pool = Vec::new();
        for f in files {
            pool.push((f.clone(), std::fs::read(f).map_err(|e| CliError::io(f, e))?));
        }
        images.insert(label, pool);
    }

    let request = StartGameRequest {
        seed: opts.seed,
        duration_s: opts.duration_s,
        round_s: opts.round_s,
        clock: Some(ClockKind::Simulated),
    };
    let mut view: GameView = client.post(&format!("/projects/{pid}/games"), &request)?;
    let gid = view.id;
    let mut rng = SplitMix64::new(view.config.seed ^ FRAME_STREAM);
    let mut shown = BTreeMap::new();

    let played = play(client, &mut view, &images, &mut rng, &mut shown, &mut note);
    if let Err(e) = played {
        // Do not leave a simulated session blocking the project.
        let rest = u64::from(view.config.duration_s) * 1000;
        let _ = client.post::<GameView>(&format!("/games/{gid}/advance"), &AdvanceRequest { ms: rest });
        return Err(e);
    }

    let summary: GameSummary = client.get(&format!("/games/{gid}/summary"))?;
    let rounds = summary
        .rounds
        .iter()
        .map(|r| RoundRow {
            index: r.index,
            target: r.target_name.clone(),
            shown: shown.get(&r.index).cloned(),
            top: r.top_name.clone(),
            target_confidence: r.target_confidence,
            score: r.score,
            correct: r.correct,
        })
        .collect::<Vec<_>>();
    Ok(SimulationReport {
        game_id: gid.to_string(),
        seed: view.config.seed,
        model_version: summary.model_version,
        total_score: summary.total_score,
        max_score: rounds.len() as f64 * comodeler_core::game::MAX_ROUND_SCORE,
        per_label: summary.per_label,
        rounds,
        warnings,
    })
}

fn play(
    client: &Client,
    view: &mut GameView,
    images: &BTreeMap<&str, Vec<(PathBuf, Vec<u8>)>>,
    rng: &mut SplitMix64,
    shown: &mut BTreeMap<u32, PathBuf>,
    note: &mut impl FnMut(String),
) -> Result<(), CliError> {
    let gid = view.id;
    let round_ms = u64::from(view.config.round_s) * 1000;
    while view.state == GameState::Running {
        let round = view.current_round.expect("running game has a round");
        let target = view.current_target_name.clone().unwrap_or_default();
        match images.get(target.as_str()).filter(|p| !p.is_empty()) {
            Some(pool) => {
                let (path, bytes) = &pool[rng.below(pool.len() as u64) as usize];
                let _: ClassificationResult =
                    client.post_bytes(&format!("/games/{gid}/frames?round={round}"), bytes.clone())?;
                shown.insert(round, path.clone());
            }
            None => note(format!("round {round}: no images for label {target:?}, the round scores 0")),
        }
        *view = client.post(&format!("/games/{gid}/advance"), &AdvanceRequest { ms: round_ms })?;
    }
    Ok(())
}
