//! JSON-over-HTTP front end for [`perception_core::QuizEngine`].
//!
//! | method | path                          | success |
//! |--------|-------------------------------|---------|
//! | POST   | `/api/sessions`               | 201 `{session_id}` |
//! | GET    | `/api/sessions/{id}/question` | 200 question card |
//! | POST   | `/api/sessions/{id}/answers`  | 204 |
//! | POST   | `/api/sessions/{id}/finish`   | 200 results summary |
//! | GET    | `/api/perception`             | 200 population perception |
//!
//! Errors are `{"code", "message"}` with a 4xx/5xx status.

pub mod config;
pub mod error;
pub mod ratelimit;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{ConnectInfo, FromRequest, Path, State};
use axum::http::{HeaderValue, Method, Request, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use perception_core::session::Perception;
use perception_core::{AnswerBounds, Catalog, QuestionCard, QuizEngine, ResultsSummary};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use config::ServiceConfig;
use error::ApiError;
use ratelimit::RateLimiter;

pub struct AppState {
    pub engine: QuizEngine,
    pub limiter: RateLimiter,
}

/// Loads the catalog, replays the triplet log and builds the engine.
/// Fails if the catalog is missing or invalid.
pub fn build_state(config: &ServiceConfig) -> anyhow::Result<Arc<AppState>> {
    let catalog = Catalog::from_path(&config.catalog)
        .with_context(|| format!("loading catalog {}", config.catalog.display()))?;
    let prior = catalog
        .build_prior(config.sigma_p_sq, config.sigma_n_sq)?
        .with_jitter_fallback(config.jitter_fallback);
    let bounds = AnswerBounds::new(config.y_min, config.y_max)?;
    let engine = QuizEngine::open(Arc::new(catalog), prior, bounds, &config.log)
        .with_context(|| format!("opening triplet log {}", config.log.display()))?;
    Ok(Arc::new(AppState { engine, limiter: RateLimiter::new(config.rate_limit) }))
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    let mut app = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/question", get(next_question))
        .route("/api/sessions/{id}/answers", post(submit_answer))
        .route("/api/sessions/{id}/finish", post(finish_session))
        .route("/api/perception", get(perception))
        .with_state(state);
    if !cors_origins.is_empty() {
        let origins: Vec<HeaderValue> = cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([axum::http::header::CONTENT_TYPE]),
        );
    }
    app
}

/// Binds, reports the bound address on stdout and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let state = build_state(&config)?;
    let app = router(state, &config.cors_origins);
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .with_context(|| format!("binding {}", config.bind))?;
    let addr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    println!("listening on {addr}");
    axum::serve(listener, app.into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

/// `pair[0]` has impact ratio `y` over `pair[1]`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Answer {
    pub pair: [usize; 2],
    pub y: f64,
}

fn malformed(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_request", e.to_string())
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(malformed)?
    };
    let session_id = state.engine.start_session(req.seed);
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id })))
}

async fn next_question(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<QuestionCard>, ApiError> {
    Ok(Json(state.engine.next_question(&id)?))
}

async fn submit_answer(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    request: Request<axum::body::Body>,
) -> Result<StatusCode, ApiError> {
    let client = request
        .extensions()
        .get::<ConnectInfo<SocketAddr>>()
        .map(|ci| ci.0.ip())
        .unwrap_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED));
    if !state.limiter.check(client) {
        return Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, "rate_limited", "too many answers"));
    }
    let body: Result<Json<Answer>, JsonRejection> = Json::<Answer>::from_request(request, &()).await;
    let Json(answer) = body.map_err(|e| malformed(e.body_text()))?;
    // Appends are fsynced; keep them off the async workers.
    tokio::task::spawn_blocking(move || {
        state.engine.submit_answer(&id, answer.pair[0], answer.pair[1], answer.y)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(StatusCode::NO_CONTENT)
}

async fn finish_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<ResultsSummary>, ApiError> {
    Ok(Json(state.engine.finish_session(&id)?))
}

async fn perception(State(state): State<Arc<AppState>>) -> Json<Perception> {
    Json(state.engine.perception())
}
