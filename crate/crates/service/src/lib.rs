//! HTTP diagnosis service. Operators pick a merchant, declare candidate
//! strategies as scene edits, simulate them against the trained artifacts
//! and compare the predicted ranking with their own.
//!
//! Artifacts are read-only after startup. The only mutable state is the
//! in-memory session store, written under a single lock. Endpoints and
//! schemas are listed in `API.md`.

mod artifacts;
mod error;
mod routes;
mod session;

use std::net::SocketAddr;
use std::path::PathBuf;

pub use artifacts::{Artifacts, Merchant};
pub use error::{ApiError, ErrorBody};
pub use routes::{
    router, AppState, ExpertRanking, MerchantDetail, MerchantSummary, OpenSession, PolicyEntry, PolicySummary,
    SetStrategies, SimulateRequest, SimulateResponse,
};
pub use session::{rank, ranks_from_order, validate_permutation, DiagnosisSession, RankedStrategy, Ranking, SessionStore};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bind: SocketAddr,
    pub token: Option<String>,
    /// Root of the seeds issued to simulate requests that omit one.
    pub seed: u64,
    /// Session store file: read at startup if present, written on shutdown.
    pub snapshot: Option<PathBuf>,
}

/// Serves until Ctrl-C, then snapshots the session store if configured.
pub async fn serve(artifacts: Artifacts, cfg: ServeConfig) -> dualsim::Result<()> {
    let store = match &cfg.snapshot {
        Some(p) if p.exists() => dualsim::io::read_json(p)?,
        _ => SessionStore::default(),
    };
    let state = AppState::new(artifacts, store, cfg.token.clone(), cfg.seed);
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|e| dualsim::Error::io(format!("binding {}", cfg.bind), e))?;
    log::info!("diagnosis service listening on {}", cfg.bind);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| dualsim::Error::io("serving", e))?;
    if let Some(p) = &cfg.snapshot {
        dualsim::io::write_json(p, &state.snapshot())?;
        log::info!("session store written to {}", p.display());
    }
    Ok(())
}
