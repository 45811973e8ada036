//! HTTP service over a [`Store`]. JSON bodies, raw or multipart image
//! uploads, and newline-delimited JSON for the event and live streams.

pub mod error;
pub mod routes;
pub mod wire;

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use comodeler_core::Store;
use tokio::net::TcpListener;
use tower_http::trace::TraceLayer;

pub use error::ApiError;
pub use routes::{describe_endpoints, endpoint_table_markdown, router, Endpoint, ENDPOINTS};

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 10 * 1024 * 1024;
pub const DEFAULT_MAX_BULK_BYTES: usize = 512 * 1024 * 1024;

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    /// Cap on ordinary request bodies, image uploads included.
    pub upload_bytes: usize,
    /// Cap on imports and live frame streams.
    pub bulk_bytes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { upload_bytes: DEFAULT_MAX_UPLOAD_BYTES, bulk_bytes: DEFAULT_MAX_BULK_BYTES }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub limits: Limits,
}

impl AppState {
    pub fn new(store: Arc<Store>) -> Self {
        AppState { store, limits: Limits::default() }
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub limits: Limits,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("data directory {path} is not usable: {source}")]
    DataDir { path: PathBuf, source: io::Error },
    #[error("could not open the store in {path}: {source}")]
    Store { path: PathBuf, source: comodeler_core::CoreError },
    #[error("cannot listen on {addr}: {source}{hint}", hint = bind_hint(source))]
    Bind { addr: SocketAddr, source: io::Error },
}

fn bind_hint(e: &io::Error) -> &'static str {
    match e.kind() {
        io::ErrorKind::AddrInUse => " (is another server already running on this port?)",
        io::ErrorKind::PermissionDenied => " (ports below 1024 usually need elevated privileges)",
        _ => "",
    }
}

fn open_store(dir: &PathBuf) -> Result<Store, StartupError> {
    let data_err = |source| StartupError::DataDir { path: dir.clone(), source };
    std::fs::create_dir_all(dir).map_err(data_err)?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"ok").map_err(data_err)?;
    std::fs::remove_file(&probe).map_err(data_err)?;
    Store::open(dir).map_err(|source| StartupError::Store { path: dir.clone(), source })
}

/// A bound, not yet running server.
pub struct Server {
    listener: TcpListener,
    state: AppState,
}

impl Server {
    /// Opens the store and binds the socket, failing early with a
    /// diagnostic if either is impossible.
    pub async fn bind(config: ServerConfig) -> Result<Self, StartupError> {
        let store = match &config.data_dir {
            Some(dir) => open_store(dir)?,
            None => Store::in_memory(),
        };
        Self::bind_with_store(config.bind, Arc::new(store), config.limits).await
    }

    pub async fn bind_with_store(addr: SocketAddr, store: Arc<Store>, limits: Limits) -> Result<Self, StartupError> {
        let listener = TcpListener::bind(addr).await.map_err(|source| StartupError::Bind { addr, source })?;
        Ok(Server { listener, state: AppState { store, limits } })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn store(&self) -> Arc<Store> {
        self.state.store.clone()
    }

    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> io::Result<()> {
        let app = router(self.state).layer(TraceLayer::new_for_http());
        tracing::info!(addr = %self.listener.local_addr()?, "listening");
        axum::serve(self.listener, app).with_graceful_shutdown(shutdown).await
    }
}
