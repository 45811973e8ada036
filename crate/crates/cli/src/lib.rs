//! `comodeler` command-line driver. Every command goes through the HTTP API.

pub mod client;
pub mod config;
pub mod error;
pub mod ingest;
pub mod simulate;

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use comodeler_api::wire::{ArchiveJson, ClassifyResponse, ModelSummary, NameRequest};
use comodeler_api::{Limits, Server, ServerConfig};
use comodeler_core::archive::Archive;
use comodeler_core::classify::{Badge, TestSampleView};
use comodeler_core::{DatasetReport, Label, LabelId, ProjectState, ProjectSummary};
use serde::Serialize;
use serde_json::Value;

use crate::client::{label_by_name, Client};
use crate::config::{FileConfig, DEFAULT_JOBS, DEFAULT_SERVER};
use crate::error::CliError;
use crate::ingest::IngestReport;
use crate::simulate::{FrameManifest, SimulateOptions, SimulationReport};

#[derive(Debug, Parser)]
#[command(name = "comodeler", version, about = "Drive a collaborative image classifier server")]
pub struct Cli {
    /// Server base URL.
    #[arg(long, global = true, env = "CO_MODELER_SERVER")]
    pub server: Option<String>,
    /// TOML file with `server`, `author` and `jobs` defaults.
    #[arg(long, global = true, env = "CO_MODELER_CONFIG")]
    pub config: Option<PathBuf>,
    /// Author id recorded on the events this client creates.
    #[arg(long, global = true, env = "CO_MODELER_AUTHOR")]
    pub author: Option<String>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create or list projects.
    #[command(subcommand)]
    Project(ProjectCmd),
    /// Manage labels of a project.
    #[command(subcommand)]
    Label(LabelCmd),
    /// Upload a `<dir>/<label>/<image>` tree, creating labels as needed.
    Ingest {
        dir: PathBuf,
        #[arg(long, short)]
        project: String,
        /// Uploads in flight.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Train a new model version.
    Train(ProjectArg),
    /// Classify an image file and record it as a test sample.
    Classify {
        file: PathBuf,
        #[arg(long, short)]
        project: String,
        /// Name of the label the image should get.
        #[arg(long)]
        expected: Option<String>,
    },
    /// Test samples, misclassified first.
    TestReport(ProjectArg),
    /// Sample counts per label.
    Report(ProjectArg),
    /// Write the project to an archive directory.
    Export {
        #[arg(long, short)]
        project: String,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Recreate a project from an archive directory.
    Import { dir: PathBuf },
    /// Play a game with a simulated clock, showing images from a manifest.
    SimulateGame {
        #[arg(long, short)]
        project: String,
        /// TOML or JSON table of `label = ["image", ...]`.
        #[arg(long, short)]
        manifest: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<u32>,
        #[arg(long)]
        round: Option<u32>,
    },
    /// Run the server.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum ProjectCmd {
    Create { name: String },
    List,
}

#[derive(Debug, Subcommand)]
pub enum LabelCmd {
    Add {
        name: String,
        #[arg(long, short)]
        project: String,
    },
    Rename {
        from: String,
        to: String,
        #[arg(long, short)]
        project: String,
    },
    Delete {
        name: String,
        #[arg(long, short)]
        project: String,
    },
}

#[derive(Debug, Args)]
pub struct ProjectArg {
    /// Project name or id.
    #[arg(long, short)]
    pub project: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CO_MODELER_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Keeps everything in memory when omitted.
    #[arg(long, env = "CO_MODELER_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, env = "CO_MODELER_MAX_UPLOAD_BYTES", default_value_t = comodeler_api::DEFAULT_MAX_UPLOAD_BYTES)]
    pub max_upload_bytes: usize,
    /// `tracing` filter such as `info` or `comodeler_api=debug`.
    #[arg(long, env = "CO_MODELER_LOG", default_value = "info")]
    pub log_level: String,
}

/// What a command produced: JSON for `--json`, text otherwise.
pub struct Output {
    pub json: Value,
    pub text: String,
}

impl Output {
    fn new(value: &impl Serialize, text: String) -> Self {
        Output { json: serde_json::to_value(value).expect("serializable output"), text }
    }
}

struct Settings {
    server: String,
    author: String,
    jobs: usize,
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    Ok(Settings {
        server: cli.server.clone().or(file.server).unwrap_or_else(|| DEFAULT_SERVER.to_string()),
        author: cli.author.clone().or(file.author).unwrap_or_else(|| "cli".to_string()),
        jobs: file.jobs.unwrap_or(DEFAULT_JOBS),
    })
}

/// Runs everything except `serve`. Warnings go to `warn` as they happen.
pub fn run(cli: &Cli, warn: &mut dyn FnMut(&str)) -> Result<Output, CliError> {
    let s = settings(cli)?;
    let client = Client::new(&s.server, &s.author)?;
    match &cli.command {
        Command::Project(ProjectCmd::Create { name }) => {
            let p: ProjectState = client.post("/projects", &NameRequest { name: name.clone() })?;
            let text = format!("created project {} ({})\n", p.name, p.id);
            Ok(Output::new(&p, text))
        }
        Command::Project(ProjectCmd::List) => {
            let all: Vec<ProjectSummary> = client.get("/projects")?;
            let mut text = String::new();
            for p in &all {
                let model = p.model_version.map_or("-".to_string(), |v| format!("v{v}"));
                writeln!(text, "{}  {:<24} seq {:<6} model {model}", p.id, p.name, p.head_seq).unwrap();
            }
            if all.is_empty() {
                text.push_str("no projects\n");
            }
            Ok(Output::new(&all, text))
        }
        Command::Label(cmd) => label(&client, cmd),
        Command::Ingest { dir, project, jobs } => {
            let report = ingest::ingest(&client, project, dir, jobs.unwrap_or(s.jobs))?;
            for f in &report.failures {
                warn(&format!("{}: {}", f.path.display(), f.error));
            }
            let text = ingest_text(&report);
            Ok(Output::new(&report, text))
        }
        Command::Train(ProjectArg { project }) => {
            let p = client.project(project)?;
            let m: ModelSummary = client.post_empty(&format!("/projects/{}/train", p.id))?;
            let text = format!(
                "model v{}: {} labels, {} samples, loss {:.4} -> {:.4}\n",
                m.version,
                m.label_ids.len(),
                m.train_sample_count,
                m.report.initial_loss,
                m.report.final_loss
            );
            Ok(Output::new(&m, text))
        }
        Command::Classify { file, project, expected } => {
            let p = client.project(project)?;
            let mut path = format!("/projects/{}/classify", p.id);
            if let Some(name) = expected {
                let id = label_by_name(&p, name).ok_or_else(|| CliError::NotFound(format!("no label {name:?}")))?;
                path.push_str(&format!("?expected_label_id={id}"));
            }
            let bytes = std::fs::read(file).map_err(|e| CliError::io(file, e))?;
            let r: ClassifyResponse = client.post_bytes(&path, bytes)?;
            let mut text = String::new();
            let name = |id: LabelId| label_name(&p, id);
            writeln!(text, "{} ({:.1}%)", name(r.result.top_label_id), r.result.top_confidence * 100.0).unwrap();
            for (id, c) in &r.result.distribution {
                writeln!(text, "  {:<20} {:6.2}%", name(*id), c * 100.0).unwrap();
            }
            match r.result.correct {
                Some(true) => text.push_str("correct\n"),
                Some(false) => text.push_str("incorrect\n"),
                None => {}
            }
            Ok(Output::new(&r, text))
        }
        Command::TestReport(ProjectArg { project }) => {
            let p = client.project(project)?;
            let views: Vec<TestSampleView> = client.get(&format!("/projects/{}/tests", p.id))?;
            let mut text = String::new();
            for v in &views {
                let badge = match v.badge {
                    Badge::Cross => "[x]",
                    Badge::Check => "[v]",
                    Badge::None => "[ ]",
                };
                let expected = v.sample.expected_label_id.map_or("-".into(), |l| label_name(&p, l));
                let top = v.sample.latest_result.as_ref().map_or("-".into(), |r| {
                    format!("{} {:.1}%", label_name(&p, r.top_label_id), r.top_confidence * 100.0)
                });
                writeln!(text, "{badge} test {:<5} expected {expected:<16} got {top}", v.sample.id).unwrap();
            }
            if views.is_empty() {
                text.push_str("no test samples\n");
            }
            Ok(Output::new(&views, text))
        }
        Command::Report(ProjectArg { project }) => {
            let p = client.project(project)?;
            let r: DatasetReport = client.get(&format!("/projects/{}/report", p.id))?;
            let mut text = String::new();
            for l in &r.labels {
                writeln!(text, "{:<24} {}", l.name, l.count).unwrap();
            }
            writeln!(text, "total {}", r.total).unwrap();
            if let Some(ratio) = r.imbalance_ratio {
                writeln!(text, "imbalance {ratio:.2}").unwrap();
            }
            Ok(Output::new(&r, text))
        }
        Command::Export { project, out } => {
            let p = client.project(project)?;
            let archive: ArchiveJson = client.get(&format!("/projects/{}/export", p.id))?;
            let manifest = archive.manifest.clone();
            let archive = archive.into_archive().map_err(|e| CliError::Protocol(format!("bad blob encoding: {e}")))?;
            archive.write_dir(out).map_err(|e| CliError::Other(format!("{}: {e}", out.display())))?;
            let summary = serde_json::json!({
                "project_id": p.id,
                "dir": out,
                "samples": manifest.samples.len(),
                "test_samples": manifest.test_samples.len(),
                "blobs": archive.blobs.len(),
            });
            let text = format!(
                "exported {} samples and {} test samples to {}\n",
                manifest.samples.len(),
                manifest.test_samples.len(),
                out.display()
            );
            Ok(Output::new(&summary, text))
        }
        Command::Import { dir } => {
            let archive = read_archive(dir)?;
            let p: ProjectState = client.post("/import", &ArchiveJson::from(&archive))?;
            let text = format!("imported project {} ({}) at seq {}\n", p.name, p.id, p.head_seq);
            Ok(Output::new(&p, text))
        }
        Command::SimulateGame { project, manifest, seed, duration, round } => {
            let frames = FrameManifest::load(manifest)?;
            let opts = SimulateOptions { seed: *seed, duration_s: *duration, round_s: *round };
            let report = simulate::simulate(&client, project, &frames, &opts, |m| warn(m))?;
            let text = game_text(&report);
            Ok(Output::new(&report, text))
        }
        Command::Serve(_) => Err(CliError::Usage("serve is handled by the binary".into())),
    }
}

fn read_archive(dir: &Path) -> Result<Archive, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not an archive directory", dir.display())));
    }
    Archive::read_dir(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))
}

fn label(client: &Client, cmd: &LabelCmd) -> Result<Output, CliError> {
    let find = |p: &ProjectState, name: &str| {
        label_by_name(p, name).ok_or_else(|| CliError::NotFound(format!("no label {name:?}")))
    };
    match cmd {
        LabelCmd::Add { name, project } => {
            let p = client.project(project)?;
            let l: Label = client.post(&format!("/projects/{}/labels", p.id), &NameRequest { name: name.clone() })?;
            let text = format!("added label {} ({})\n", l.name, l.id);
            Ok(Output::new(&l, text))
        }
        LabelCmd::Rename { from, to, project } => {
            let p = client.project(project)?;
            let id = find(&p, from)?;
            let e: Value = client.send_json(
                reqwest::Method::PATCH,
                &format!("/projects/{}/labels/{id}", p.id),
                &NameRequest { name: to.clone() },
            )?;
            Ok(Output::new(&e, format!("renamed {from} to {to}\n")))
        }
        LabelCmd::Delete { name, project } => {
            let p = client.project(project)?;
            let id = find(&p, name)?;
            let e: Value = client.delete(&format!("/projects/{}/labels/{id}", p.id))?;
            Ok(Output::new(&e, format!("deleted label {name}\n")))
        }
    }
}

fn label_name(p: &ProjectState, id: LabelId) -> String {
    p.label(id).map_or_else(|| id.to_string(), |l| l.name.clone())
}

fn ingest_text(r: &IngestReport) -> String {
    let mut text = String::new();
    let verb = if r.created_project { "created" } else { "using" };
    writeln!(text, "{verb} project {} ({})", r.project, r.project_id).unwrap();
    for l in &r.labels {
        let new = if l.created_label { " (new label)" } else { "" };
        writeln!(
            text,
            "{:<24} {:>4} uploaded {:>4} already present {:>3} failed  total {}{new}",
            l.name, l.uploaded, l.already_present, l.failed, l.total
        )
        .unwrap();
    }
    for f in &r.failures {
        writeln!(text, "unreadable: {}: {}", f.path.display(), f.error).unwrap();
    }
    for s in &r.skipped {
        writeln!(text, "skipped: {}", s.display()).unwrap();
    }
    writeln!(text, "{} new samples, project total {}", r.new_samples, r.total).unwrap();
    text
}

fn game_text(r: &SimulationReport) -> String {
    let mut text = String::new();
    writeln!(text, "{:>5}  {:<16} {:<16} {:>8} {:>6}  shown", "round", "target", "top", "conf", "score").unwrap();
    for row in &r.rounds {
        let conf = row.target_confidence.map_or("-".into(), |c| format!("{:.1}%", c * 100.0));
        let shown = row.shown.as_ref().map_or("-".into(), |p| p.display().to_string());
        let top = row.top.as_deref().unwrap_or("-");
        writeln!(text, "{:>5}  {:<16} {:<16} {:>8} {:>6.2}  {shown}", row.index, row.target, top, conf, row.score)
            .unwrap();
    }
    text.push('\n');
    for l in &r.per_label {
        writeln!(text, "{:<24} {:>2} rounds  average {:.1}%", l.name, l.rounds, l.average_confidence_pct).unwrap();
    }
    writeln!(text, "total score {:.2} / {:.0}  (seed {})", r.total_score, r.max_score, r.seed).unwrap();
    text
}

/// Opens the store, binds, and serves until Ctrl-C.
pub fn serve(args: &ServeArgs, json: bool) -> Result<(), CliError> {
    let filter = tracing_subscriber::EnvFilter::try_new(&args.log_level)
        .map_err(|e| CliError::Usage(format!("bad log level {:?}: {e}", args.log_level)))?;
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(format!("runtime: {e}")))?;
    runtime.block_on(async {
        let config = ServerConfig {
            bind: args.bind,
            data_dir: args.data_dir.clone(),
            limits: Limits { upload_bytes: args.max_upload_bytes, ..Limits::default() },
        };
        let server = Server::bind(config).await.map_err(|e| CliError::Other(e.to_string()))?;
        let addr = server.local_addr();
        if json {
            println!("{}", serde_json::json!({ "listening": format!("http://{addr}") }));
        } else {
            println!("listening on http://{addr}");
        }
        server
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Other(format!("server: {e}")))
    })
}
