use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use comodeler_api::wire::*;
use comodeler_api::{Limits, Server, ServerConfig, StartupError};
use comodeler_core::classify::{Badge, LiveResult, TestSampleView};
use comodeler_core::game::{GameState, GameSummary, GameView};
use comodeler_core::sync::PullResponse;
use comodeler_core::{synth, DatasetReport, EventRecord, Label, ProjectState, ProjectSummary, Store};
use futures::StreamExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reqwest::multipart::{Form, Part};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

struct TestServer {
    base: String,
    client: Client,
    _shutdown: tokio::sync::oneshot::Sender<()>,
}

async fn start(store: Arc<Store>, limits: Limits) -> TestServer {
    let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
    let server = Server::bind_with_store(addr, store, limits).await.unwrap();
    let base = format!("http://{}", server.local_addr());
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(server.run(async {
        let _ = rx.await;
    }));
    TestServer { base, client: Client::new(), _shutdown: tx }
}

impl TestServer {
    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    async fn json<T: serde::de::DeserializeOwned>(&self, req: reqwest::RequestBuilder, status: StatusCode) -> T {
        let resp = req.header(AUTHOR_HEADER, "tester").send().await.unwrap();
        let got = resp.status();
        let text = resp.text().await.unwrap();
        assert_eq!(got, status, "{text}");
        serde_json::from_str(&text).unwrap_or_else(|e| panic!("{e}: {text}"))
    }

    async fn get<T: serde::de::DeserializeOwned>(&self, path: &str) -> T {
        self.json(self.client.get(self.url(path)), StatusCode::OK).await
    }

    async fn error(&self, req: reqwest::RequestBuilder, status: StatusCode) -> ErrorDetail {
        self.json::<ErrorBody>(req, status).await.error
    }

    async fn upload(&self, project: &str, label: u64, bytes: Vec<u8>, key: Option<&str>) -> (StatusCode, Value) {
        let mut form = Form::new()
            .part("image", Part::bytes(bytes).file_name("img.png").mime_str("image/png").unwrap())
            .text("label_id", label.to_string());
        if let Some(k) = key {
            form = form.text("dedupe_key", k.to_string());
        }
        let resp = self
            .client
            .post(self.url(&format!("/projects/{project}/samples")))
            .multipart(form)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn scripted_session_over_http() {
    let srv = start(Arc::new(Store::in_memory()), Limits::default()).await;

    let health: Value = srv.get("/health").await;
    assert_eq!(health["status"], "ok");

    let project: ProjectState =
        srv.json(srv.client.post(srv.url("/projects")).json(&json!({"name": "Fruit Salad"})), StatusCode::CREATED).await;
    assert_eq!(project.head_seq, 0);
    let dup = srv.error(srv.client.post(srv.url("/projects")).json(&json!({"name": "Fruit Salad"})), StatusCode::CONFLICT).await;
    assert_eq!(dup.code, "DuplicateProjectName");
    let pid = project.id.to_string();

    // Three writes, then pull from zero.
    let classes = synth::three_classes();
    let mut labels = Vec::new();
    for (name, _) in &classes {
        let label: Label = srv
            .json(
                srv.client.post(srv.url(&format!("/projects/{pid}/labels"))).json(&json!({"name": name})),
                StatusCode::CREATED,
            )
            .await;
        labels.push(label.id);
    }
    let pulled: PullResponse = srv.get(&format!("/projects/{pid}/events?since=0")).await;
    assert_eq!(pulled.events.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(pulled.events[0].author, "tester");

    // One label with samples is not enough to train.
    let first = synth::generate(&classes[0].1, 10, 48, 12.0, 1);
    for (i, img) in first.iter().enumerate() {
        let (status, _) = srv.upload(&pid, labels[0].0, img.encode_png(), Some(&format!("a{i}"))).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let err = srv.error(srv.client.post(srv.url(&format!("/projects/{pid}/train"))), StatusCode::CONFLICT).await;
    assert_eq!(err.code, "TrainingPrerequisiteError");

    for (c, (_, spec)) in classes.iter().enumerate().skip(1) {
        for img in synth::generate(spec, 10, 48, 12.0, 1 + c as u64) {
            let (status, _) = srv.upload(&pid, labels[c].0, img.encode_png(), None).await;
            assert_eq!(status, StatusCode::CREATED);
        }
    }
    // Re-sending with the same dedupe key does not create a duplicate.
    let (status, body) = srv.upload(&pid, labels[0].0, first[0].encode_png(), Some("a0")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["created"], false);
    let report: DatasetReport = srv.get(&format!("/projects/{pid}/report")).await;
    assert_eq!(report.total, 30);
    assert!(report.labels.iter().all(|l| l.count == 10));

    // Bad uploads.
    let (status, body) = srv.upload(&pid, labels[0].0, b"not an image".to_vec(), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "ImageDecodeError");
    let (status, body) = srv.upload(&pid, 999, first[0].encode_png(), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{body}");

    let nomodel = srv
        .error(
            srv.client.post(srv.url(&format!("/projects/{pid}/classify"))).body(first[0].encode_png()),
            StatusCode::CONFLICT,
        )
        .await;
    assert_eq!(nomodel.code, "NoModelError");

    let model: ModelSummary =
        srv.json(srv.client.post(srv.url(&format!("/projects/{pid}/train"))), StatusCode::OK).await;
    assert_eq!(model.version, 1);
    assert_eq!(model.label_ids, labels);
    let current: ModelSummary = srv.get(&format!("/projects/{pid}/model")).await;
    assert_eq!(current, model);

    // Photo mode.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let photo = synth::render(&classes[1].1, 48, 12.0, 0.08, &mut rng).encode_png();
    let classified: ClassifyResponse = srv
        .json(
            srv.client
                .post(srv.url(&format!("/projects/{pid}/classify?expected_label_id={}", labels[0])))
                .body(photo.clone()),
            StatusCode::CREATED,
        )
        .await;
    assert_eq!(classified.result.top_label_id, labels[1]);
    assert_eq!(classified.test_sample.latest_result.as_ref().unwrap().correct, Some(false));
    let tid = classified.test_sample.id;
    let dash: Vec<TestSampleView> = srv.get(&format!("/projects/{pid}/tests")).await;
    assert_eq!(dash[0].badge, Badge::Cross);
    let fixed: comodeler_core::TestSample = srv
        .json(
            srv.client
                .put(srv.url(&format!("/projects/{pid}/tests/{tid}/expected")))
                .json(&json!({"label_id": labels[1]})),
            StatusCode::OK,
        )
        .await;
    assert_eq!(fixed.latest_result.unwrap().correct, Some(true));

    // Blob fetch by hash.
    let blob = srv.client.get(srv.url(&format!("/blobs/{}", classified.test_sample.image_ref))).send().await.unwrap();
    assert_eq!(blob.headers()["content-type"], "image/png");
    assert_eq!(blob.bytes().await.unwrap().to_vec(), photo);
    let bad = srv.error(srv.client.get(srv.url("/blobs/xyz")), StatusCode::BAD_REQUEST).await;
    assert_eq!(bad.code, "InvalidBlobHash");

    // Live mode: 100 frames at 60 fps, throttled, nothing stored.
    let head_before: ProjectState = srv.get(&format!("/projects/{pid}")).await;
    let frame = STANDARD.encode(&photo);
    let mut body = String::new();
    for i in 0..100u64 {
        body.push_str(&serde_json::to_string(&LiveFrameJson { at_ms: i * 1000 / 60, image: frame.clone() }).unwrap());
        body.push('\n');
    }
    let resp = srv.client.post(srv.url(&format!("/projects/{pid}/live"))).body(body).send().await.unwrap();
    assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
    let text = resp.text().await.unwrap();
    let results: Vec<LiveResult> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!results.is_empty() && results.len() <= 9, "{}", results.len());
    assert!(results.iter().all(|r| r.result == results[0].result));
    let head_after: ProjectState = srv.get(&format!("/projects/{pid}")).await;
    assert_eq!(head_after.head_seq, head_before.head_seq);

    // Event stream: backlog then a live event within a second.
    let head = head_after.head_seq;
    let resp = srv
        .client
        .get(srv.url(&format!("/projects/{pid}/events/stream?since={}", head - 1)))
        .send()
        .await
        .unwrap();
    let mut lines = resp.bytes_stream();
    let mut buf = Vec::new();
    let mut next_event = async || -> EventRecord {
        loop {
            if let Some(pos) = buf.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = buf.drain(..=pos).collect();
                if line.len() > 1 {
                    return serde_json::from_slice(&line).unwrap();
                }
                continue;
            }
            buf.extend_from_slice(&lines.next().await.unwrap().unwrap());
        }
    };
    assert_eq!(next_event().await.seq, head);
    let sent = Instant::now();
    let _: Label = srv
        .json(
            srv.client.post(srv.url(&format!("/projects/{pid}/labels"))).json(&json!({"name": "spare"})),
            StatusCode::CREATED,
        )
        .await;
    let live = tokio::time::timeout(Duration::from_secs(1), next_event()).await.unwrap();
    assert_eq!(live.seq, head + 1);
    assert!(sent.elapsed() <= Duration::from_secs(1));
    let spare_id = live.seq;
    let _: EventRecord = srv
        .json(srv.client.delete(srv.url(&format!("/projects/{pid}/labels/{spare_id}"))), StatusCode::OK)
        .await;

    // Game with a simulated clock.
    let view: GameView = srv
        .json(
            srv.client
                .post(srv.url(&format!("/projects/{pid}/games")))
                .json(&json!({"seed": 7, "clock": "simulated"})),
            StatusCode::CREATED,
        )
        .await;
    assert_eq!(view.round_count, 18);
    let busy = srv
        .error(srv.client.post(srv.url(&format!("/projects/{pid}/games"))).json(&json!({})), StatusCode::CONFLICT)
        .await;
    assert_eq!(busy.code, "GameInProgress");
    let gid = view.id;
    let mut view = view;
    while view.state == GameState::Running {
        let round = view.current_round.unwrap();
        let idx = labels.iter().position(|l| Some(*l) == view.current_target).unwrap();
        let img = synth::render(&classes[idx].1, 48, 12.0, 0.08, &mut rng).encode_png();
        let _: comodeler_core::ClassificationResult = srv
            .json(srv.client.post(srv.url(&format!("/games/{gid}/frames?round={round}"))).body(img), StatusCode::OK)
            .await;
        view = srv
            .json(srv.client.post(srv.url(&format!("/games/{gid}/advance"))).json(&json!({"ms": 5000})), StatusCode::OK)
            .await;
    }
    let stale = srv
        .error(
            srv.client.post(srv.url(&format!("/games/{gid}/frames?round=1"))).body(photo.clone()),
            StatusCode::CONFLICT,
        )
        .await;
    assert_eq!(stale.code, "SessionFinished");
    let summary: GameSummary = srv.get(&format!("/games/{gid}/summary")).await;
    assert_eq!(summary.rounds.len(), 18);
    let sum: f64 = summary.rounds.iter().map(|r| r.score).sum();
    assert!((summary.total_score - sum).abs() <= 1e-9);
    assert!(summary.total_score > 100.0, "{}", summary.total_score);
    let best: HighScore = srv.get(&format!("/projects/{pid}/highscore")).await;
    assert_eq!(best.high_score, Some(summary.total_score));

    // Export, then import into a fresh server.
    let archive: ArchiveJson = srv.get(&format!("/projects/{pid}/export")).await;
    assert_eq!(archive.manifest.samples.len(), 30);
    let other = start(Arc::new(Store::in_memory()), Limits::default()).await;
    let imported: ProjectState =
        other.json(other.client.post(other.url("/import")).json(&archive), StatusCode::CREATED).await;
    let original: ProjectState = srv.get(&format!("/projects/{pid}")).await;
    assert_eq!(imported, original);
    let listed: Vec<ProjectSummary> = other.get("/projects").await;
    assert_eq!(listed.len(), 1);

    let mut corrupt = archive.clone();
    let key = corrupt.blobs.keys().next().unwrap().clone();
    corrupt.blobs.insert(key, STANDARD.encode(b"tampered"));
    let third = start(Arc::new(Store::in_memory()), Limits::default()).await;
    let err = third.error(third.client.post(third.url("/import")).json(&corrupt), StatusCode::UNPROCESSABLE_ENTITY).await;
    assert_eq!(err.code, "BlobCorrupt");
}

#[tokio::test]
async fn errors_are_machine_readable() {
    let srv = start(Arc::new(Store::in_memory()), Limits::default()).await;
    let missing = srv
        .error(srv.client.get(srv.url("/projects/00000000-0000-0000-0000-000000000000")), StatusCode::NOT_FOUND)
        .await;
    assert_eq!(missing.code, "ProjectNotFound");
    let bad_id = srv.error(srv.client.get(srv.url("/projects/not-a-uuid")), StatusCode::BAD_REQUEST).await;
    assert_eq!(bad_id.code, "BadRequest");
    let bad_json = srv
        .error(
            srv.client.post(srv.url("/projects")).header("content-type", "application/json").body("{"),
            StatusCode::BAD_REQUEST,
        )
        .await;
    assert_eq!(bad_json.code, "BadRequest");
    let empty = srv.error(srv.client.post(srv.url("/projects")).json(&json!({"name": "  "})), StatusCode::BAD_REQUEST).await;
    assert_eq!(empty.code, "InvalidName");
    let nowhere = srv.error(srv.client.get(srv.url("/nope")), StatusCode::NOT_FOUND).await;
    assert_eq!(nowhere.code, "NotFound");

    let p: ProjectState = srv.json(srv.client.post(srv.url("/projects")).json(&json!({"name": "p"})), StatusCode::CREATED).await;
    let ahead = srv.error(srv.client.get(srv.url(&format!("/projects/{}/events?since=5", p.id))), StatusCode::CONFLICT).await;
    assert_eq!(ahead.code, "CursorAhead");

    let doc: Value = srv.get("/openapi.json").await;
    let paths = doc["paths"].as_object().unwrap();
    let ops: usize = paths.values().map(|m| m.as_object().unwrap().len()).sum();
    assert_eq!(ops, comodeler_api::ENDPOINTS.len());
}

#[tokio::test]
async fn oversized_uploads_are_rejected() {
    let limits = Limits { upload_bytes: 64 * 1024, ..Limits::default() };
    let srv = start(Arc::new(Store::in_memory()), limits).await;
    let p: ProjectState = srv.json(srv.client.post(srv.url("/projects")).json(&json!({"name": "p"})), StatusCode::CREATED).await;
    let big = vec![0u8; 128 * 1024];
    let err = srv
        .error(srv.client.post(srv.url(&format!("/projects/{}/classify", p.id))).body(big.clone()), StatusCode::PAYLOAD_TOO_LARGE)
        .await;
    assert_eq!(err.code, "PayloadTooLarge");
    let (status, body) = srv.upload(&p.id.to_string(), 1, big, None).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE, "{body}");
}

#[tokio::test]
async fn startup_failures_explain_themselves() {
    let taken = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = taken.local_addr().unwrap();
    let err = match Server::bind(ServerConfig { bind: addr, data_dir: None, limits: Limits::default() }).await {
        Err(e) => e,
        Ok(_) => panic!("bound a busy port"),
    };
    assert!(matches!(err, StartupError::Bind { .. }));
    assert!(err.to_string().contains("already running"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("not-a-dir");
    std::fs::write(&file, b"x").unwrap();
    let config = ServerConfig { bind: "127.0.0.1:0".parse().unwrap(), data_dir: Some(file.clone()), limits: Limits::default() };
    let err = match Server::bind(config).await {
        Err(e) => e,
        Ok(_) => panic!("used a file as data dir"),
    };
    assert!(matches!(err, StartupError::DataDir { .. }));
    assert!(err.to_string().contains("not-a-dir"), "{err}");
}

#[tokio::test]
async fn data_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = || ServerConfig {
        bind: "127.0.0.1:0".parse().unwrap(),
        data_dir: Some(dir.path().to_path_buf()),
        limits: Limits::default(),
    };
    let server = Server::bind(config()).await.unwrap();
    let store = server.store();
    let p = store.create_project("kept").unwrap().id;
    store.add_label(p, "x", "t").unwrap();
    drop(server);
    drop(store);
    let server = Server::bind(config()).await.unwrap();
    assert_eq!(server.store().project(p).unwrap().head_seq, 1);
}
