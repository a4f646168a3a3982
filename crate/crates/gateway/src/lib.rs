//! The HTTP gateway: bearer-token auth over a local user table, projects,
//! documents and threads backed by the document store, agent runs streamed as
//! `text/event-stream`, patch application, the tool registry and telemetry.

pub mod app;
pub mod auth;
pub mod config;
pub mod error;
pub mod routes;
pub mod telemetry;

use std::net::SocketAddr;
use std::sync::Arc;

pub use app::{Gateway, StartupError};
pub use config::GatewayConfig;
pub use error::ApiError;
pub use routes::router;

/// Serves `gateway` on `listener` until the future is dropped.
pub async fn serve(gateway: Arc<Gateway>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(gateway)).await
}

/// Binds `addr` and serves in a background task; returns the bound address.
pub async fn spawn(gateway: Arc<Gateway>, addr: &str) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(gateway, listener))))
}
