//! HTTP API, version 1.
//!
//! Every route lives under `/v1`; the same routes are also answered at the
//! root for older clients. Errors share one body shape:
//! `{"code": "...", "message": "...", "retryable": bool}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::battle::BattlePlay;
use crate::chronicle::Storybook;
use crate::config::{ConfigError, Settings};
use crate::engine::Engine;
use crate::error::Error;
use crate::forge::WeaponCard;
use crate::king::PersonaConfig;
use crate::session::{GameSession, TurnOutcome};
use crate::store::is_safe_id;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    WrongPhase,
    ContractError,
    BackendError,
    NotFound,
    Busy,
    Validation,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub retryable: bool,
}

/// Status, code and retryability for each engine error.
pub fn classify(err: &Error) -> (StatusCode, ErrorCode, bool) {
    use Error::*;
    match err {
        WrongPhase { .. } | IllegalTransition { .. } | Capacity | AlreadyPlayed(_) => {
            (StatusCode::CONFLICT, ErrorCode::WrongPhase, false)
        }
        EmptyText | TextTooLong { .. } | Validation(_) => (StatusCode::BAD_REQUEST, ErrorCode::Validation, false),
        UnknownCard(_) | NotFound(_) => (StatusCode::NOT_FOUND, ErrorCode::NotFound, false),
        Busy(_) => (StatusCode::CONFLICT, ErrorCode::Busy, true),
        Contract(_) => (StatusCode::BAD_GATEWAY, ErrorCode::ContractError, true),
        Backend(e) => (StatusCode::BAD_GATEWAY, ErrorCode::BackendError, e.is_transient()),
        Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal, true),
    }
}

#[derive(Debug)]
pub struct ApiFailure(pub StatusCode, pub ApiError);

impl ApiFailure {
    fn new(status: StatusCode, code: ErrorCode, message: impl Into<String>, retryable: bool) -> Self {
        ApiFailure(
            status,
            ApiError {
                code,
                message: message.into(),
                retryable,
            },
        )
    }
}

impl From<Error> for ApiFailure {
    fn from(err: Error) -> Self {
        let (status, code, retryable) = classify(&err);
        ApiFailure::new(status, code, err.to_string(), retryable)
    }
}

impl From<JsonRejection> for ApiFailure {
    fn from(rejection: JsonRejection) -> Self {
        ApiFailure::new(StatusCode::BAD_REQUEST, ErrorCode::Validation, rejection.body_text(), false)
    }
}

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiFailure>;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    backend_label: String,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, backend_label: impl Into<String>) -> Self {
        AppState {
            engine,
            backend_label: backend_label.into(),
        }
    }
}

/// Runs a blocking engine call off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> crate::error::Result<T> + Send + 'static,
{
    let engine = state.engine.clone();
    match tokio::task::spawn_blocking(move || f(&engine)).await {
        Ok(result) => result.map_err(ApiFailure::from),
        Err(e) => Err(ApiFailure::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            ErrorCode::Internal,
            e.to_string(),
            true,
        )),
    }
}

fn image_url(path_or_url: &str) -> String {
    match path_or_url.strip_prefix("images/") {
        Some(file) => format!("/images/{file}"),
        None => path_or_url.to_owned(),
    }
}

/// A session as clients see it.
#[derive(Debug, Serialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub session: GameSession,
    pub anger_limit: u32,
    pub background_url: Option<String>,
    pub cards: Vec<CardView>,
}

#[derive(Debug, Serialize)]
pub struct CardView {
    #[serde(flatten)]
    pub card: WeaponCard,
    pub artwork_url: Option<String>,
    pub played: bool,
}

impl From<GameSession> for SessionView {
    fn from(session: GameSession) -> Self {
        let cards = session
            .weapons
            .iter()
            .map(|card| CardView {
                artwork_url: card.artwork.as_ref().map(|a| image_url(&a.path_or_url)),
                played: session.battle.as_ref().is_some_and(|b| b.is_played(&card.id)),
                card: card.clone(),
            })
            .collect();
        SessionView {
            anger_limit: session.anger_limit(),
            background_url: session.background.as_ref().map(|b| image_url(&b.path_or_url)),
            cards,
            session,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub seed: Option<u64>,
    pub persona: Option<PersonaConfig>,
}

#[derive(Debug, Deserialize)]
pub struct TurnRequest {
    pub text: String,
}

#[derive(Debug, Deserialize)]
pub struct PlayRequest {
    pub card_id: String,
}

#[derive(Debug, Serialize)]
pub struct TurnResponse {
    #[serde(flatten)]
    pub outcome: TurnOutcome,
    pub session: SessionView,
}

#[derive(Debug, Serialize)]
pub struct PlayResponse {
    pub play: BattlePlay,
    pub session: SessionView,
}

#[derive(Debug, Serialize)]
pub struct CloseResponse {
    pub session_id: String,
    pub outcome: String,
    pub json_url: String,
    pub markdown_url: String,
    pub storybook: Storybook,
}

#[derive(Debug, Deserialize)]
pub struct StorybookQuery {
    pub format: Option<String>,
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "backend": state.backend_label }))
}

async fn create_session(
    State(state): State<AppState>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    // Every field is optional, so an empty body is fine too.
    let request: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice::<Option<CreateSession>>(&body)
            .map_err(|e| ApiFailure::new(StatusCode::BAD_REQUEST, ErrorCode::Validation, e.to_string(), false))?
            .unwrap_or_default()
    };
    let session = blocking(&state, move |e| e.create_session(request.seed, request.persona)).await?;
    Ok((StatusCode::CREATED, Json(session.into())))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let session = blocking(&state, move |e| e.session(&id)).await?;
    Ok(Json(session.into()))
}

async fn submit_turn(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<TurnRequest>, JsonRejection>,
) -> ApiResult<Json<TurnResponse>> {
    let Json(request) = body?;
    let (outcome, session) = blocking(&state, move |e| {
        let outcome = e.submit_turn(&id, &request.text)?;
        Ok((outcome, e.session(&id)?))
    })
    .await?;
    Ok(Json(TurnResponse {
        outcome,
        session: session.into(),
    }))
}

async fn play_card(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<PlayRequest>, JsonRejection>,
) -> ApiResult<Json<PlayResponse>> {
    let Json(request) = body?;
    let (play, session) = blocking(&state, move |e| {
        let play = e.play_card(&id, &request.card_id)?;
        Ok((play, e.session(&id)?))
    })
    .await?;
    Ok(Json(PlayResponse {
        play,
        session: session.into(),
    }))
}

async fn close_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<CloseResponse>> {
    let book = blocking(&state, move |e| e.close(&id)).await?;
    Ok(Json(CloseResponse {
        session_id: book.session_id.clone(),
        outcome: book.outcome.label().to_owned(),
        json_url: format!("/v1/sessions/{}/storybook", book.session_id),
        markdown_url: format!("/v1/sessions/{}/storybook?format=md", book.session_id),
        storybook: book,
    }))
}

async fn get_storybook(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<StorybookQuery>,
) -> ApiResult<Response> {
    match query.format.as_deref() {
        None | Some("json") => {
            let book = blocking(&state, move |e| e.storybook(&id)).await?;
            Ok(Json(book).into_response())
        }
        Some("md") | Some("markdown") => {
            let md = blocking(&state, move |e| e.storybook_markdown(&id)).await?;
            Ok(([(header::CONTENT_TYPE, "text/markdown; charset=utf-8")], md).into_response())
        }
        Some(other) => Err(ApiFailure::new(
            StatusCode::BAD_REQUEST,
            ErrorCode::Validation,
            format!("unknown format `{other}` (expected json or md)"),
            false,
        )),
    }
}

async fn get_image(State(state): State<AppState>, Path(file): Path<String>) -> ApiResult<Response> {
    let not_found = || ApiFailure::new(StatusCode::NOT_FOUND, ErrorCode::NotFound, format!("image {file}"), false);
    let id = file.strip_suffix(".png").filter(|id| is_safe_id(id)).ok_or_else(not_found)?;
    let path = state.engine.store().image_path(id);
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

fn api_routes() -> Router<AppState> {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/turns", post(submit_turn))
        .route("/sessions/{id}/battle/plays", post(play_card))
        .route("/sessions/{id}/close", post(close_session))
        .route("/sessions/{id}/storybook", get(get_storybook))
}

pub fn cors_layer(allow_origins: &[String]) -> CorsLayer {
    if allow_origins.is_empty() {
        return CorsLayer::permissive();
    }
    let origins: Vec<HeaderValue> = allow_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any)
}

pub fn router(state: AppState, allow_origins: &[String]) -> Router {
    Router::new()
        .nest("/v1", api_routes())
        .merge(api_routes())
        .route("/healthz", get(healthz))
        .route("/images/{file}", get(get_image))
        .layer(cors_layer(allow_origins))
        .with_state(state)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
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

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serves until interrupted.
pub async fn serve(settings: &Settings) -> Result<(), ServeError> {
    let engine = Arc::new(settings.build_engine()?);
    let addr = SocketAddr::from(([0, 0, 0, 0], settings.port));
    let listener = TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })?;
    tracing::info!(%addr, backend = settings.backend_kind.as_str(), "listening");
    let app = router(
        AppState::new(engine, settings.backend_kind.as_str()),
        &settings.cors_allow_origins,
    );
    axum::serve(listener, app).with_graceful_shutdown(shutdown_signal()).await?;
    tracing::info!("shut down");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendError;
    use crate::error::ContractError;
    use crate::session::Phase;

    #[test]
    fn error_table() {
        let cases: Vec<(Error, u16, ErrorCode, bool)> = vec![
            (
                Error::WrongPhase {
                    phase: Phase::Battle,
                    operation: "submit_turn",
                },
                409,
                ErrorCode::WrongPhase,
                false,
            ),
            (
                Error::IllegalTransition {
                    from: Phase::Ending,
                    event: crate::session::PhaseEvent::FourthWeapon,
                },
                409,
                ErrorCode::WrongPhase,
                false,
            ),
            (Error::Capacity, 409, ErrorCode::WrongPhase, false),
            (Error::AlreadyPlayed("c".into()), 409, ErrorCode::WrongPhase, false),
            (Error::EmptyText, 400, ErrorCode::Validation, false),
            (Error::TextTooLong { len: 2001, max: 2000 }, 400, ErrorCode::Validation, false),
            (Error::Validation("persona".into()), 400, ErrorCode::Validation, false),
            (
                Error::Storage(crate::error::StorageError::Malformed {
                    path: "p".into(),
                    reason: "r".into(),
                }),
                500,
                ErrorCode::Internal,
                true,
            ),
            (Error::NotFound("x".into()), 404, ErrorCode::NotFound, false),
            (Error::UnknownCard("x".into()), 404, ErrorCode::NotFound, false),
            (Error::Busy("x".into()), 409, ErrorCode::Busy, true),
            (Error::Contract(ContractError::new("bad")), 502, ErrorCode::ContractError, true),
            (Error::Backend(BackendError::Quota), 502, ErrorCode::BackendError, true),
            (Error::Backend(BackendError::ScriptExhausted(3)), 502, ErrorCode::BackendError, false),
        ];
        for (err, status, code, retryable) in cases {
            let (s, c, r) = classify(&err);
            assert_eq!((s.as_u16(), c, r), (status, code, retryable), "{err}");
        }
    }

    #[test]
    fn image_urls() {
        assert_eq!(image_url("images/img-ab.png"), "/images/img-ab.png");
        assert_eq!(image_url("https://x/y.png"), "https://x/y.png");
    }
}
