// SPDX-License-Identifier: MIT OR Apache-2.0

//! HTTP host for [`StubScorer`], plus fault injection for client tests.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::oneshot;

use super::scorer::{ScoreResponse, StubScorer};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default)]
pub struct ServerFaults {
    /// Answer every request with this status.
    pub status: Option<u16>,
    /// Sleep before answering.
    pub delay: Option<Duration>,
    /// Answer 200 with a body that is not a score response.
    pub malformed: bool,
}

struct AppState {
    scorer: StubScorer,
    faults: ServerFaults,
}

#[derive(Deserialize)]
struct Request {
    text: String,
}

async fn score(State(state): State<Arc<AppState>>, Json(req): Json<Request>) -> Response {
    if let Some(d) = state.faults.delay {
        tokio::time::sleep(d).await;
    }
    if let Some(code) = state.faults.status {
        let code = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return (code, "injected failure").into_response();
    }
    if state.faults.malformed {
        return (StatusCode::OK, "{\"score\": 1}").into_response();
    }
    Json(ScoreResponse {
        scores: state.scorer.score_text(&req.text).into_inner(),
    })
    .into_response()
}

pub fn router(scorer: StubScorer, faults: ServerFaults) -> Router {
    Router::new()
        .route("/v1/score", post(score))
        .route("/health", get(|| async { "ok" }))
        .with_state(Arc::new(AppState { scorer, faults }))
}

/// Serves until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, scorer: StubScorer) -> Result<()> {
    axum::serve(listener, router(scorer, ServerFaults::default())).await?;
    Ok(())
}

/// A stub server on a background thread; stops when dropped.
pub struct StubServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn spawn(addr: SocketAddr, scorer: StubScorer, faults: ServerFaults) -> Result<Self> {
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let (ready_tx, ready_rx) = std::sync::mpsc::channel::<std::io::Result<()>>();
        let thread = std::thread::spawn(move || {
            let rt = match tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
            {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                    return;
                }
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(std_listener) {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                        return;
                    }
                };
                let _ = ready_tx.send(Ok(()));
                let _ = axum::serve(listener, router(scorer, faults))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        ready_rx
            .recv()
            .map_err(|_| std::io::Error::other("stub server thread exited early"))??;
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
