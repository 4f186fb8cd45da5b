//! HTTP JSON API over one shared, immutable checkpoint.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use simile_core::locate_gen::Candidate;
use simile_core::Error as CoreError;
use tower_http::services::ServeDir;

use crate::checkpoint::load_model;
use crate::engine::{decoding_for, Engine};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub checkpoint: PathBuf,
    pub bind: std::net::IpAddr,
    pub port: u16,
    pub beam_size: usize,
    /// Request cap in characters; `None` uses the model's own limit.
    pub max_request_chars: Option<usize>,
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct AppState {
    engine: Engine,
    beam_size: usize,
    max_chars: usize,
}

impl AppState {
    /// Fails if the defaults are unusable or the cap exceeds the model's.
    pub fn new(engine: Engine, beam_size: usize, max_request_chars: Option<usize>) -> Result<Self> {
        decoding_for(beam_size)?;
        let limit = engine.max_text_chars();
        let max_chars = max_request_chars.unwrap_or(limit);
        if max_chars > limit {
            return Err(CoreError::Config(format!("max request length {max_chars} exceeds the model limit {limit}")).into());
        }
        Ok(Self {
            engine,
            beam_size,
            max_chars,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocateRequest {
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub text: String,
    pub position: usize,
    pub beam_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolishRequest {
    pub text: String,
    pub position: Option<usize>,
    pub beam_size: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub checkpoint_id: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Gap {
    pub index: usize,
    pub probability: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct LocateResponse {
    pub positions: Vec<Gap>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateResponse {
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PolishResponse {
    pub position: usize,
    pub simile: String,
    pub polished_text: String,
    pub candidates: Vec<Candidate>,
}

/// Number of candidates returned by `/api/polish`.
pub const POLISH_CANDIDATES: usize = 5;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
}

impl ApiError {
    fn bad(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }

    /// Internal faults are logged under an opaque id that is all the caller sees.
    fn internal(err: impl std::fmt::Display) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        tracing::error!(error_id = %id, "{err}");
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal_error",
            message: id,
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::TooLong { .. } => Self {
                status: StatusCode::PAYLOAD_TOO_LARGE,
                code: "text_too_long",
                message: e.to_string(),
            },
            CoreError::OutOfRange { what: "position", .. } => Self::bad("position_out_of_range", e.to_string()),
            CoreError::Invalid(_) | CoreError::Empty(_) => Self::bad("invalid_input", e.to_string()),
            other => Self::internal(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code,
                message: &self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ApiError::bad("invalid_request", e.to_string()),
        _ => ApiError::bad("malformed_json", e.to_string()),
    })
}

impl AppState {
    fn check_text(&self, text: &str) -> std::result::Result<(), ApiError> {
        let n = text.chars().count();
        if n > self.max_chars {
            return Err(ApiError {
                status: StatusCode::PAYLOAD_TOO_LARGE,
                code: "text_too_long",
                message: format!("text has {n} characters, the limit is {}", self.max_chars),
            });
        }
        Ok(())
    }

    fn check_position(text: &str, position: usize) -> std::result::Result<(), ApiError> {
        let n = text.chars().count();
        if position > n {
            return Err(ApiError::bad(
                "position_out_of_range",
                format!("position {position} is outside 0..={n}"),
            ));
        }
        Ok(())
    }

    fn beam(&self, requested: Option<usize>) -> std::result::Result<simile_core::locate_gen::Decoding, ApiError> {
        decoding_for(requested.unwrap_or(self.beam_size)).map_err(|e| ApiError::bad("invalid_beam_size", e.to_string()))
    }

    pub fn locate(&self, body: &[u8]) -> std::result::Result<LocateResponse, ApiError> {
        let req: LocateRequest = parse(body)?;
        self.check_text(&req.text)?;
        let probs = self.engine.locate(&req.text)?;
        Ok(LocateResponse {
            positions: probs
                .into_iter()
                .enumerate()
                .map(|(index, probability)| Gap { index, probability })
                .collect(),
        })
    }

    pub fn generate(&self, body: &[u8]) -> std::result::Result<GenerateResponse, ApiError> {
        let req: GenerateRequest = parse(body)?;
        self.check_text(&req.text)?;
        Self::check_position(&req.text, req.position)?;
        let decoding = self.beam(req.beam_size)?;
        Ok(GenerateResponse {
            candidates: self.engine.generate(&req.text, req.position, decoding)?,
        })
    }

    pub fn polish(&self, body: &[u8]) -> std::result::Result<PolishResponse, ApiError> {
        let req: PolishRequest = parse(body)?;
        self.check_text(&req.text)?;
        if let Some(p) = req.position {
            Self::check_position(&req.text, p)?;
        }
        let decoding = self.beam(req.beam_size)?;
        let mut r = self.engine.polish(&req.text, req.position, decoding)?;
        r.candidates.truncate(POLISH_CANDIDATES);
        Ok(PolishResponse {
            position: r.position,
            simile: r.simile,
            polished_text: r.polished_text,
            candidates: r.candidates,
        })
    }
}

async fn blocking<T: Send + 'static>(
    state: Arc<AppState>,
    body: Bytes,
    f: fn(&AppState, &[u8]) -> std::result::Result<T, ApiError>,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || f(&state, &body))
        .await
        .map_err(ApiError::internal)?
        .map(Json)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        checkpoint_id: state.engine.checkpoint_id().to_owned(),
    })
}

async fn locate(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<LocateResponse> {
    blocking(state, body, AppState::locate).await
}

async fn generate(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<GenerateResponse> {
    blocking(state, body, AppState::generate).await
}

async fn polish(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<PolishResponse> {
    blocking(state, body, AppState::polish).await
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/locate", post(locate))
        .route("/api/generate", post(generate))
        .route("/api/polish", post(polish))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Loads the checkpoint, binds, and serves until `shutdown` resolves;
/// in-flight requests are completed before returning.
pub async fn serve(config: ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<()> {
    let loaded = load_model(&config.checkpoint)?;
    let state = Arc::new(AppState::new(Engine::new(loaded)?, config.beam_size, config.max_request_chars)?);
    let addr = SocketAddr::new(config.bind, config.port);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(
        address = %listener.local_addr()?,
        checkpoint = %state.engine.checkpoint_id(),
        "serving"
    );
    axum::serve(listener, router(state, config.static_dir))
        .with_graceful_shutdown(shutdown)
        .await?;
    tracing::info!("shut down");
    Ok(())
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
