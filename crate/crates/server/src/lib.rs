//! HTTP service for live rankings: serves the catalog, the facet schema and
//! per-cohort rankings, captures selection events from the shop UI, and
//! rebuilds weight tables on request.
//!
//! State is event-sourced. Every accepted event, finalization and recompute
//! is appended to `events.jsonl` in the log directory; weight tables are also
//! written to `snapshots/` with a `snapshot.json` manifest. Restarting with
//! the same seed records replays the log to the same state.

pub mod api;
pub mod state;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use chrono::Utc;

pub use api::router;
pub use state::{EngineState, ServerConfig, StateError};

/// Serves until Ctrl-C. Idle sessions are swept once a minute.
pub async fn serve(state: Arc<EngineState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    serve_on(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    state: Arc<EngineState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = state.clone();
    let sweep = tokio::spawn(async move {
        let mut tick = tokio::time::interval(std::time::Duration::from_secs(60));
        loop {
            tick.tick().await;
            let s = sweeper.clone();
            match tokio::task::spawn_blocking(move || s.sweep_idle(Utc::now())).await {
                Ok(Ok(done)) if !done.is_empty() => log::info!("finalized {} idle sessions", done.len()),
                Ok(Err(e)) => log::error!("idle sweep failed: {e}"),
                _ => {}
            }
        }
    });
    let served = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    sweep.abort();
    served
}
