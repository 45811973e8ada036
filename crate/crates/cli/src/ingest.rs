//! Bulk upload of a `<dir>/<label>/<image>` tree.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use comodeler_api::wire::NameRequest;
use comodeler_core::{DatasetReport, Label, LabelId, ProjectState};
use serde::Serialize;

use crate::client::{label_by_name, Client};
use crate::error::CliError;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Serialize)]
pub struct LabelIngest {
    pub name: String,
    pub label_id: LabelId,
    pub created_label: bool,
    pub uploaded: usize,
    pub already_present: usize,
    pub failed: usize,
    /// Live samples under the label after the run.
    pub total: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileFailure {
    pub path: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub project_id: String,
    pub project: String,
    pub created_project: bool,
    pub labels: Vec<LabelIngest>,
    pub new_samples: usize,
    pub total: usize,
    pub failures: Vec<FileFailure>,
    /// Files without an image extension.
    pub skipped: Vec<PathBuf>,
}

struct Job {
    label: usize,
    label_id: LabelId,
    path: PathBuf,
    key: String,
}

enum Outcome {
    New,
    Existing,
    Failed(String),
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if entry.file_name().to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

pub fn ingest(client: &Client, project: &str, dir: &Path, jobs: usize) -> Result<IngestReport, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let label_dirs: Vec<PathBuf> = read_dir_sorted(dir)?.into_iter().filter(|p| p.is_dir()).collect();

    let (mut state, created_project) = match client.find_project(project)? {
        Some(s) => (s, false),
        None => {
            let s: ProjectState = client.post("/projects", &NameRequest { name: project.to_string() })?;
            (s, true)
        }
    };
    let pid = state.id;

    let mut labels = Vec::new();
    let mut work = Vec::new();
    let mut skipped = Vec::new();
    for label_dir in &label_dirs {
        let name = label_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let (label_id, created_label) = match label_by_name(&state, &name) {
            Some(id) => (id, false),
            None => {
                let label: Label = client.post(&format!("/projects/{pid}/labels"), &NameRequest { name: name.clone() })?;
                (label.id, true)
            }
        };
        for path in read_dir_sorted(label_dir)? {
            if !path.is_file() || !is_image(&path) {
                skipped.push(path);
                continue;
            }
            let file = path.file_name().unwrap_or_default().to_string_lossy();
            work.push(Job { label: labels.len(), label_id, key: format!("{name}/{file}"), path });
        }
        labels.push(LabelIngest {
            name,
            label_id,
            created_label,
            uploaded: 0,
            already_present: 0,
            failed: 0,
            total: 0,
        });
    }

    let queue = Mutex::new(work.into_iter());
    let outcomes = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            scope.spawn(|| loop {
                let Some(job) = queue.lock().unwrap().next() else { break };
                let outcome = match std::fs::read(&job.path) {
                    Err(e) => Outcome::Failed(e.to_string()),
                    Ok(bytes) => {
                        let name = job.path.file_name().unwrap_or_default().to_string_lossy();
                        match client.upload_sample(pid, job.label_id, &name, bytes, Some(&job.key)) {
                            Ok(r) if r.created => Outcome::New,
                            Ok(_) => Outcome::Existing,
                            Err(e) => Outcome::Failed(e.to_string()),
                        }
                    }
                };
                outcomes.lock().unwrap().push((job, outcome));
            });
        }
    });

    let mut outcomes = outcomes.into_inner().unwrap();
    outcomes.sort_by(|a, b| a.0.path.cmp(&b.0.path));
    let mut failures = Vec::new();
    for (job, outcome) in outcomes {
        let entry = &mut labels[job.label];
        match outcome {
            Outcome::New => entry.uploaded += 1,
            Outcome::Existing => entry.already_present += 1,
            Outcome::Failed(error) => {
                entry.failed += 1;
                failures.push(FileFailure { path: job.path, error });
            }
        }
    }

    let report: DatasetReport = client.get(&format!("/projects/{pid}/report"))?;
    let counts: BTreeMap<LabelId, usize> = report.labels.iter().map(|l| (l.label_id, l.count)).collect();
    for l in &mut labels {
        l.total = counts.get(&l.label_id).copied().unwrap_or(0);
    }
    state = client.get(&format!("/projects/{pid}"))?;
    Ok(IngestReport {
        project_id: pid.to_string(),
        project: state.name,
        created_project,
        new_samples: labels.iter().map(|l| l.uploaded).sum(),
        labels,
        total: report.total,
        failures,
        skipped,
    })
}
