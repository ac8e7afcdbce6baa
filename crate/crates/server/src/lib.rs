//! HTTP API for the archive. Every route lives under `/api` and delegates to
//! [`archive_core::archive::Archive`]; blocking store work runs on the
//! blocking thread pool.

pub mod error;
pub mod extract;
pub mod routes;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use archive_core::archive::Archive;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::error::{ApiError, ApiResult};

#[derive(Clone)]
pub struct AppState {
    pub archive: Arc<Archive>,
}

impl AppState {
    pub fn new(archive: Arc<Archive>) -> Self {
        AppState { archive }
    }

    /// Runs `f` on the blocking pool and maps core errors to API errors.
    pub async fn run<T, F>(&self, f: F) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&Archive) -> archive_core::error::Result<T> + Send + 'static,
    {
        let archive = self.archive.clone();
        tokio::task::spawn_blocking(move || f(&archive))
            .await
            .map_err(|e| {
                tracing::error!(error = %e, "blocking task failed");
                ApiError::internal()
            })?
            .map_err(ApiError::from)
    }

    /// Runs `f` on the blocking pool without waiting for it; failures are only logged.
    pub fn record<F>(&self, f: F)
    where
        F: FnOnce(&Archive) -> archive_core::error::Result<()> + Send + 'static,
    {
        let archive = self.archive.clone();
        tokio::task::spawn_blocking(move || {
            if let Err(e) = f(&archive) {
                tracing::warn!(error = %e, "usage event dropped");
            }
        });
    }
}

pub fn router(archive: Arc<Archive>) -> axum::Router {
    routes::router(AppState::new(archive))
}

/// Serves the API on `listener` until `shutdown` resolves, with the index worker running.
pub async fn serve(
    listener: TcpListener,
    archive: Arc<Archive>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let worker = archive.start_index_worker();
    let app = router(archive);
    let result = axum::serve(listener, app.into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(shutdown)
        .await;
    tokio::task::spawn_blocking(move || drop(worker)).await.ok();
    result
}

/// A server on its own thread and runtime, stopped on drop. Used by tests and tooling.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(archive: Arc<Archive>) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("archive-server".into()).spawn(move || {
            runtime.block_on(serve(listener, archive, async {
                let _ = rx.await;
            }))
        })?;
        Ok(BackgroundServer {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
