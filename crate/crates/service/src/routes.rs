use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::header::AUTHORIZATION;
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dualsim::aggregator::{PolicySignal, SimulationConfig};
use dualsim::domain::{apply_intervention, Category, GroupEstimate, Intervention, MixtureWeight, PolicyText, Scene, Tier};
use dualsim::rng;

use crate::artifacts::Artifacts;
use crate::error::ApiError;
use crate::session::{rank, validate_permutation, DiagnosisSession, Ranking, SessionStore};

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    artifacts: Artifacts,
    store: Mutex<SessionStore>,
    token: Option<String>,
    seed: u64,
}

impl AppState {
    /// `token`, when set, is required as `Authorization: Bearer <token>`.
    /// `seed` drives the seeds handed out to requests that omit one.
    pub fn new(artifacts: Artifacts, store: SessionStore, token: Option<String>, seed: u64) -> Self {
        AppState {
            inner: Arc::new(Inner {
                artifacts,
                store: Mutex::new(store),
                token,
                seed,
            }),
        }
    }

    pub fn artifacts(&self) -> &Artifacts {
        &self.inner.artifacts
    }

    /// Copy of the session store, for snapshots.
    pub fn snapshot(&self) -> SessionStore {
        self.store().clone()
    }

    fn store(&self) -> MutexGuard<'_, SessionStore> {
        // A panicked writer leaves no partial state behind: every mutation
        // is a single assignment under the lock.
        self.inner.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/merchants", get(list_merchants))
        .route("/merchants/{id}", get(merchant))
        .route("/policies", get(policies))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/strategies", post(set_strategies))
        .route("/sessions/{id}/simulate", post(simulate))
        .route("/sessions/{id}/expert-ranking", post(set_expert_ranking))
        .route("/sessions/{id}/ranking", get(ranking))
        .layer(middleware::from_fn_with_state(state.clone(), authorize))
        .with_state(state)
}

async fn authorize(State(state): State<AppState>, req: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(token) = &state.inner.token {
        let presented = req
            .headers()
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return Err(ApiError::Unauthorized);
        }
    }
    Ok(next.run(req).await)
}

/// JSON body whose rejections use the service error shape.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(JsonRejection::JsonDataError(e)) => Err(ApiError::Validation(e.body_text())),
            Err(other) => Err(ApiError::MalformedBody(other.body_text())),
        }
    }
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::Validation(e.body_text()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MerchantSummary {
    pub merchant_id: String,
    pub tier: Tier,
    pub category: Category,
    pub price_tier: f64,
    pub rating: f64,
    pub promotion: Option<String>,
    pub visitors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MerchantDetail {
    pub scene: Scene,
    pub visitors: usize,
    pub mixture: Vec<MixtureWeight>,
}

async fn list_merchants(State(state): State<AppState>) -> Json<Vec<MerchantSummary>> {
    let rows = state
        .artifacts()
        .merchants
        .values()
        .map(|m| MerchantSummary {
            merchant_id: m.scene.merchant_id.clone(),
            tier: m.scene.tier,
            category: m.scene.category,
            price_tier: m.scene.price_tier,
            rating: m.scene.rating,
            promotion: m.scene.promotion.clone(),
            visitors: m.visitors,
        })
        .collect();
    Json(rows)
}

async fn merchant(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<MerchantDetail>, ApiError> {
    let m = state.artifacts().merchants.get(&id).ok_or(ApiError::UnknownMerchant(id))?;
    Ok(Json(MerchantDetail {
        scene: m.scene.clone(),
        visitors: m.visitors,
        mixture: m.mixture.weights.clone(),
    }))
}

#[derive(Debug, Deserialize)]
struct PolicyQuery {
    merchant_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub policy: usize,
    pub persona_id: usize,
    pub subgroup_id: usize,
    pub support: usize,
    pub instruction: PolicyText,
    /// Share of the merchant's visitors; only with `merchant_id`.
    pub mixture_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy_count: usize,
    pub encoder_fingerprint: String,
    pub config_hash: String,
    pub policy_signal: PolicySignal,
    pub merchant_id: Option<String>,
    pub policies: Vec<PolicyEntry>,
}

async fn policies(
    State(state): State<AppState>,
    q: Result<Query<PolicyQuery>, QueryRejection>,
) -> Result<Json<PolicySummary>, ApiError> {
    let q = query(q)?;
    let a = state.artifacts();
    let mixture = match &q.merchant_id {
        Some(id) => Some(&a.merchants.get(id).ok_or_else(|| ApiError::UnknownMerchant(id.clone()))?.mixture),
        None => None,
    };
    let policies = a
        .registry
        .policies
        .iter()
        .enumerate()
        .map(|(i, p)| PolicyEntry {
            policy: i,
            persona_id: p.persona_id,
            subgroup_id: p.subgroup_id,
            support: p.support,
            instruction: p.instruction.clone(),
            mixture_weight: mixture.map(|m| m.weight_of(i)),
        })
        .collect();
    Ok(Json(PolicySummary {
        policy_count: a.registry.len(),
        encoder_fingerprint: a.registry.encoder_fingerprint.clone(),
        config_hash: a.registry.config_hash.clone(),
        policy_signal: a.model.policy_signal,
        merchant_id: q.merchant_id,
        policies,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenSession {
    pub merchant_id: String,
}

async fn open_session(
    State(state): State<AppState>,
    Body(req): Body<OpenSession>,
) -> Result<(StatusCode, Json<DiagnosisSession>), ApiError> {
    if !state.artifacts().merchants.contains_key(&req.merchant_id) {
        return Err(ApiError::UnknownMerchant(req.merchant_id));
    }
    let session = state.store().open(req.merchant_id);
    Ok((StatusCode::CREATED, Json(session)))
}

async fn session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<DiagnosisSession>, ApiError> {
    Ok(Json(state.store().get(&id)?.clone()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetStrategies {
    pub strategies: Vec<Intervention>,
}

/// Replaces the strategy list; results and expert ranking are cleared.
async fn set_strategies(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<SetStrategies>,
) -> Result<Json<DiagnosisSession>, ApiError> {
    let merchant_id = state.store().get(&id)?.merchant_id.clone();
    let scene = &state.artifacts().merchants[&merchant_id].scene;
    let mut strategies = req.strategies;
    for (i, s) in strategies.iter_mut().enumerate() {
        apply_intervention(scene, s).map_err(|e| ApiError::Validation(format!("strategy {i}: {e}")))?;
        if s.label.trim().is_empty() {
            s.label = format!("strategy-{i}");
        }
    }
    let mut store = state.store();
    let session = store.get_mut(&id)?;
    session.strategies = strategies;
    session.results.clear();
    session.expert_ranking = None;
    session.revision += 1;
    Ok(Json(session.clone()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(rename = "N", alias = "samples", default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub stratified: bool,
}

fn default_lambda() -> f64 {
    SimulationConfig::default().lambda
}

fn default_samples() -> usize {
    SimulationConfig::default().samples
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub session_id: String,
    /// The seed used, whether supplied or issued by the server.
    pub seed: u64,
    pub lambda: f64,
    pub samples: usize,
    pub results: Vec<GroupEstimate>,
}

/// Every strategy is simulated with the same seed, so differences between
/// them are not Monte Carlo noise in the draw of policies and visitors.
async fn simulate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<SimulateRequest>,
) -> Result<Json<SimulateResponse>, ApiError> {
    let (session, seed) = {
        let mut store = state.store();
        let session = store.get(&id)?.clone();
        let seed = match req.seed {
            Some(s) => s,
            None => {
                store.seeds_issued += 1;
                rng::derive(state.inner.seed, store.seeds_issued)
            }
        };
        (session, seed)
    };
    let cfg = SimulationConfig {
        samples: req.samples,
        lambda: req.lambda,
        seed,
        stratified: req.stratified,
        ..SimulationConfig::default()
    };
    cfg.validate()?;
    if session.strategies.is_empty() {
        return Err(ApiError::Validation("session has no strategies to simulate".into()));
    }
    let worker = state.clone();
    let strategies = session.strategies.clone();
    let merchant_id = session.merchant_id.clone();
    let results = tokio::task::spawn_blocking(move || {
        let a = worker.artifacts();
        let m = &a.merchants[&merchant_id];
        strategies.iter().map(|s| a.simulate(m, s, &cfg)).collect::<dualsim::Result<Vec<_>>>()
    })
    .await
    .map_err(|e| ApiError::Core(dualsim::Error::InvariantViolation(format!("simulation task failed: {e}"))))??;

    let mut store = state.store();
    let current = store.get_mut(&id)?;
    if current.revision != session.revision {
        return Err(ApiError::StaleSession(format!(
            "strategies of `{id}` changed during simulation; results discarded"
        )));
    }
    current.results = results.clone();
    Ok(Json(SimulateResponse {
        session_id: id,
        seed,
        lambda: req.lambda,
        samples: req.samples,
        results,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertRanking {
    /// Strategy indices, best first.
    pub ranking: Vec<usize>,
}

async fn set_expert_ranking(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<ExpertRanking>,
) -> Result<Json<DiagnosisSession>, ApiError> {
    let mut store = state.store();
    let session = store.get_mut(&id)?;
    validate_permutation(&req.ranking, session.strategies.len())?;
    session.expert_ranking = Some(req.ranking);
    Ok(Json(session.clone()))
}

#[derive(Debug, Deserialize)]
struct RankingQuery {
    lambda: Option<f64>,
}

/// `?lambda=` re-fuses the stored branch means without re-simulating.
async fn ranking(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<RankingQuery>, QueryRejection>,
) -> Result<Json<Ranking>, ApiError> {
    let q = query(q)?;
    let store = state.store();
    Ok(Json(rank(store.get(&id)?, q.lambda)?))
}
