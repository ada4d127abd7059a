//! HTTP front end over the results repository.
//!
//! Every request is authenticated by a bearer token from the configuration,
//! checked against the role allow-list, and then handed to the single
//! in-process [`Repository`]. Writes take the repository lock exclusively.

pub mod config;
pub mod error;
pub mod routes;

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use cdr_core::{Clock, Repository, SystemClock};
use parking_lot::RwLock;
use tokio::net::TcpListener;

pub use config::{Config, TokenGrant};
pub use error::{ApiError, ServeError};
pub use routes::{router, Principal, RangeHint, ResultSubmission};

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    pub repo: Arc<RwLock<Repository>>,
    pub tokens: Arc<BTreeMap<String, Principal>>,
}

impl AppState {
    pub fn new(repo: Repository, tokens: &BTreeMap<String, TokenGrant>) -> Self {
        let tokens = tokens
            .iter()
            .map(|(token, grant)| {
                (token.clone(), Principal { role: grant.role, actor_id: grant.actor_id.clone() })
            })
            .collect();
        AppState { repo: Arc::new(RwLock::new(repo)), tokens: Arc::new(tokens) }
    }
}

/// Opens the store named by the configuration.
pub fn open_state(config: &Config, clock: Arc<dyn Clock>) -> Result<AppState, ServeError> {
    let policy = config.uid_policy()?;
    std::fs::create_dir_all(&config.store_path)?;
    let repo = Repository::open(&config.store_path, clock)?.with_uid_policy(policy);
    Ok(AppState::new(repo, &config.tokens))
}

/// Binds the configured port on all interfaces.
pub async fn bind(port: u16) -> Result<TcpListener, ServeError> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    TcpListener::bind(addr)
        .await
        .map_err(|e| ServeError::PortUnavailable { port, reason: e.to_string() })
}

/// Serves `state` on `listener` until `shutdown` resolves.
pub async fn serve_with_shutdown(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// Runs the service until SIGINT or SIGTERM.
pub async fn serve(config: Config) -> Result<(), ServeError> {
    let state = open_state(&config, Arc::new(SystemClock))?;
    let listener = bind(config.port).await?;
    tracing::info!(port = config.port, store = %config.store_path.display(), "listening");
    serve_with_shutdown(listener, state, shutdown_signal()).await?;
    tracing::info!("stopped");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut sig) => {
                sig.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = terminate => {}
    }
}
