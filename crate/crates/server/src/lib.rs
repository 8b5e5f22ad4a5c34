//! HTTP/JSON service: review assessments, preview edits, commit
//! interventions, and follow model versions.

pub mod api;
pub mod config;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use cytotune_core::dataset::{load_samples, DatasetError};
use cytotune_core::{Clock, Engine, EngineError, EngineSetup, InterventionLog};

pub use api::router;
pub use config::ServiceConfig;
pub use state::AppState;

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("loading {what}: {source}")]
    Data { what: &'static str, source: DatasetError },
    #[error("opening the log: {0}")]
    Log(#[from] cytotune_core::event_log::LogError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Loads the data, replays or creates the log, and builds the shared state.
pub fn build_state(config: &ServiceConfig) -> Result<Arc<AppState>, StartError> {
    let load = |what, path: &std::path::Path| {
        load_samples(path, &config.schema).map_err(|source| StartError::Data { what, source })
    };
    let dataset = load("training data", &config.data.train)?;
    let holdout = match &config.data.holdout {
        Some(p) => load("holdout data", p)?,
        None => Vec::new(),
    };
    let review = match &config.data.review {
        Some(p) => load("review data", p)?,
        None => Vec::new(),
    };
    let mut setup = EngineSetup::new(config.schema.clone(), dataset);
    setup.review = review;
    setup.policy = config.policy.clone();
    setup.config = config.train.clone();
    let log = InterventionLog::open(&config.log.path)?;
    let engine = Engine::start(setup, log, Clock::System)?;
    Ok(AppState::new(engine, holdout))
}

/// Binds `host:port` (port 0 picks a free one) and serves until `shutdown`
/// resolves. `on_bound` receives the actual address.
pub async fn serve(
    config: &ServiceConfig,
    state: Arc<AppState>,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), StartError> {
    let listener = tokio::net::TcpListener::bind((config.server.host.as_str(), config.server.port)).await?;
    on_bound(listener.local_addr()?);
    let app = router(state, config.server.cors_origin.as_deref());
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}
