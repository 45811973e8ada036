//! Blocking HTTP client for the server API.

use std::time::Duration;

use comodeler_api::wire::{ErrorBody, UploadResponse, AUTHOR_HEADER};
use comodeler_core::{LabelId, ProjectId, ProjectState, ProjectSummary};
use reqwest::blocking::{multipart, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

#[derive(Clone)]
pub struct Client {
    base: String,
    author: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(server: &str, author: &str) -> Result<Self, CliError> {
        let base = server.trim_end_matches('/').to_string();
        if !base.starts_with("http://") && !base.starts_with("https://") {
            return Err(CliError::Usage(format!("server URL must start with http:// or https://, got {server:?}")));
        }
        // Training a large project can take a while.
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| CliError::Transport { url: base.clone(), source: e })?;
        Ok(Client { base, author: author.to_string(), http })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn send<T: DeserializeOwned>(&self, path: &str, req: RequestBuilder) -> Result<T, CliError> {
        let url = self.url(path);
        let resp = req
            .header(AUTHOR_HEADER, &self.author)
            .send()
            .map_err(|e| CliError::Transport { url: url.clone(), source: e })?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| CliError::Transport { url: url.clone(), source: e })?;
        if status.is_success() {
            return serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Protocol(format!("unexpected response from {url}: {e}")));
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(CliError::Api { status: status.as_u16(), code: body.error.code, message: body.error.message }),
            Err(_) => Err(CliError::Api {
                status: status.as_u16(),
                code: "Http".into(),
                message: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, CliError> {
        self.send(path, self.http.get(self.url(path)))
    }

    pub fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T, CliError> {
        self.send(path, self.http.post(self.url(path)).json(body))
    }

    pub fn send_json<T: DeserializeOwned>(
        &self,
        method: reqwest::Method,
        path: &str,
        body: &impl Serialize,
    ) -> Result<T, CliError> {
        self.send(path, self.http.request(method, self.url(path)).json(body))
    }

    pub fn delete<T: DeserializeOwned>(&self, path: &str) -> Result<T, CliError> {
        self.send(path, self.http.delete(self.url(path)))
    }

    pub fn post_empty<T: DeserializeOwned>(&self, path: &str) -> Result<T, CliError> {
        self.send(path, self.http.post(self.url(path)))
    }

    pub fn post_bytes<T: DeserializeOwned>(&self, path: &str, bytes: Vec<u8>) -> Result<T, CliError> {
        self.send(path, self.http.post(self.url(path)).header("content-type", "application/octet-stream").body(bytes))
    }

    pub fn upload_sample(
        &self,
        project: ProjectId,
        label: LabelId,
        file_name: &str,
        bytes: Vec<u8>,
        dedupe_key: Option<&str>,
    ) -> Result<UploadResponse, CliError> {
        let mut form = multipart::Form::new()
            .part("image", multipart::Part::bytes(bytes).file_name(file_name.to_string()))
            .text("label_id", label.to_string());
        if let Some(key) = dedupe_key {
            form = form.text("dedupe_key", key.to_string());
        }
        let path = format!("/projects/{project}/samples");
        self.send(&path, self.http.post(self.url(&path)).multipart(form))
    }

    /// Looks a project up by id or, failing that, by exact name.
    pub fn find_project(&self, spec: &str) -> Result<Option<ProjectState>, CliError> {
        if let Ok(id) = spec.parse::<ProjectId>() {
            return match self.get(&format!("/projects/{id}")) {
                Ok(p) => Ok(Some(p)),
                Err(CliError::Api { status: 404, .. }) => Ok(None),
                Err(e) => Err(e),
            };
        }
        let all: Vec<ProjectSummary> = self.get("/projects")?;
        match all.into_iter().find(|p| p.name == spec) {
            Some(p) => self.get(&format!("/projects/{}", p.id)).map(Some),
            None => Ok(None),
        }
    }

    pub fn project(&self, spec: &str) -> Result<ProjectState, CliError> {
        self.find_project(spec)?.ok_or_else(|| CliError::NotFound(format!("no project matches {spec:?}")))
    }
}

/// Live label with the given name.
pub fn label_by_name(state: &ProjectState, name: &str) -> Option<LabelId> {
    state.live_labels().find(|l| l.name == name).map(|l| l.id)
}
