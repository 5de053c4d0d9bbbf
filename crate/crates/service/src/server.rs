//! HTTP API over a live [`Session`].

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use empathy_core::affect::HueBand;
use empathy_core::image_input::MAX_UPLOAD_BYTES;
use empathy_core::runtime::Session;
use empathy_core::{AffectLabel, EmpathicResponse, Error, ImageInput, ImageSource};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::time::MissedTickBehavior;
use tracing::{info, warn};

/// Largest accepted request body. Uploads may exceed the re-encode
/// threshold, which only applies to what is sent to the model.
pub const MAX_BODY_BYTES: usize = 16 * MAX_UPLOAD_BYTES;
pub const SIDECAR_HEADER: &str = "x-affect-sidecar";
pub const DEFAULT_HISTORY_LIMIT: usize = 50;
pub const MAX_HISTORY_LIMIT: usize = 500;

#[derive(Clone)]
pub struct AppState {
    pub session: Arc<Session>,
}

pub fn router(session: Arc<Session>) -> Router {
    let token = session.config().auth_token.clone();
    let state = AppState { session };
    Router::new()
        .route("/v1/respond", post(respond))
        .route("/v1/state", get(current_state))
        .route("/v1/stream", get(stream))
        .route("/v1/feedback", post(feedback))
        .route("/v1/history", get(history))
        .route("/v1/catalog", get(catalog))
        .layer(axum::extract::DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(middleware::from_fn_with_state(token, require_token))
        .with_state(state)
}

async fn require_token(State(token): State<Option<String>>, req: Request, next: Next) -> Response {
    if let Some(expected) = token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(expected.as_str()) {
            return error(StatusCode::UNAUTHORIZED, "E_UNAUTHORIZED", "missing or wrong bearer token");
        }
    }
    next.run(req).await
}

fn error(status: StatusCode, code: &str, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({"error": message.to_string(), "codes": [code]}))).into_response()
}

#[derive(Debug, Serialize)]
pub struct RespondBody {
    pub turn_id: u64,
    #[serde(flatten)]
    pub response: EmpathicResponse,
    pub fallback: bool,
    pub backend_calls: u32,
    pub violations: Vec<String>,
}

async fn respond(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let sidecar = match headers.get(SIDECAR_HEADER).map(|v| v.to_str()) {
        None => None,
        Some(Ok(s)) => match s.trim().to_lowercase().parse::<AffectLabel>() {
            Ok(l) => Some(l),
            Err(e) => return error(StatusCode::BAD_REQUEST, "E_SIDECAR", e),
        },
        Some(Err(_)) => return error(StatusCode::BAD_REQUEST, "E_SIDECAR", "sidecar header is not text"),
    };
    if body.is_empty() {
        return error(StatusCode::BAD_REQUEST, "E_IMAGE", "empty upload");
    }
    let image = match ImageInput::from_bytes(body.to_vec(), ImageSource::Camera) {
        Ok(i) => i,
        Err(e) => return error(StatusCode::BAD_REQUEST, "E_IMAGE", e),
    };
    let session = app.session.clone();
    let outcome = tokio::task::spawn_blocking(move || session.step(&image, sidecar)).await;
    let outcome = match outcome {
        Ok(Ok(o)) => o,
        Ok(Err(e)) => return error(StatusCode::INTERNAL_SERVER_ERROR, "E_INTERNAL", e),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "E_INTERNAL", e),
    };
    if let Some(err) = outcome.backend_error {
        warn!(turn_id = outcome.turn_id, "backend outage: {err}");
        let body = json!({
            "error": err,
            "codes": ["E_BACKEND"],
            "turn_id": outcome.turn_id,
            "fallback": true,
        });
        return (StatusCode::BAD_GATEWAY, Json(body)).into_response();
    }
    info!(turn_id = outcome.turn_id, motion = %outcome.response.motion, fallback = outcome.fallback, "turn");
    Json(RespondBody {
        turn_id: outcome.turn_id,
        response: outcome.response,
        fallback: outcome.fallback,
        backend_calls: outcome.backend_calls,
        violations: outcome.violations.iter().map(|c| c.as_str().to_string()).collect(),
    })
    .into_response()
}

async fn current_state(State(app): State<AppState>) -> Response {
    Json(app.session.snapshot()).into_response()
}

/// One pushed frame: what a renderer needs, nothing more.
#[derive(Debug, Serialize)]
struct StreamFrame<'a> {
    t: f64,
    turn_id: u64,
    emoji: &'a str,
    led_frame: &'a empathy_core::LedFrame,
    pose: empathy_core::Pose,
}

async fn stream(State(app): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let fps = app.session.config().stream_fps;
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / f64::from(fps)));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let session = app.session.clone();
    let frames = futures::stream::unfold((ticker, session), |(mut ticker, session)| async move {
        ticker.tick().await;
        let state = session.snapshot();
        let frame = StreamFrame {
            t: state.t,
            turn_id: state.turn_id,
            emoji: &state.emoji,
            led_frame: &state.led_frame,
            pose: state.pose,
        };
        let event = Event::default()
            .event("frame")
            .json_data(&frame)
            .unwrap_or_else(|_| Event::default().comment("unserializable frame"));
        Some((Ok(event), (ticker, session)))
    });
    Sse::new(frames).keep_alive(KeepAlive::default())
}

#[derive(Debug, Deserialize)]
struct FeedbackBody {
    turn_id: u64,
    score: i8,
}

async fn feedback(State(app): State<AppState>, body: Bytes) -> Response {
    let parsed: FeedbackBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "E_FEEDBACK", e),
    };
    let session = app.session.clone();
    let result = tokio::task::spawn_blocking(move || session.feedback(parsed.turn_id, parsed.score)).await;
    match result {
        Ok(Ok(())) => Json(json!({"turn_id": parsed.turn_id, "score": parsed.score})).into_response(),
        Ok(Err(Error::UnknownTurn(id))) => error(StatusCode::NOT_FOUND, "E_UNKNOWN_TURN", format!("no turn {id}")),
        Ok(Err(Error::Parameter(m))) => error(StatusCode::BAD_REQUEST, "E_FEEDBACK", m),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "E_INTERNAL", e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "E_INTERNAL", e),
    }
}

#[derive(Debug, Deserialize)]
struct Page {
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn history(State(app): State<AppState>, page: Result<Query<Page>, axum::extract::rejection::QueryRejection>) -> Response {
    let Ok(Query(page)) = page else {
        return error(StatusCode::BAD_REQUEST, "E_QUERY", "offset and limit must be non-negative integers");
    };
    let offset = page.offset.unwrap_or(0);
    let limit = page.limit.unwrap_or(DEFAULT_HISTORY_LIMIT).min(MAX_HISTORY_LIMIT);
    let (total, records) = app.session.history_page(offset, limit);
    Json(json!({"total": total, "offset": offset, "limit": limit, "records": records})).into_response()
}

#[derive(Debug, Serialize)]
struct AffectView<'a> {
    label: AffectLabel,
    valence: f64,
    arousal: f64,
    hue_bands: &'a [HueBand],
    preferred_actions: &'a [String],
}

async fn catalog(State(app): State<AppState>) -> Response {
    let res = app.session.resources();
    let cfg = app.session.config();
    let anchors = &res.tables.anchors;
    let affects: Vec<AffectView<'_>> = AffectLabel::ALL
        .into_iter()
        .map(|label| AffectView {
            label,
            valence: anchors.anchor(label).valence(),
            arousal: anchors.anchor(label).arousal(),
            hue_bands: anchors.hue_bands(label),
            preferred_actions: anchors.preferred_actions(label),
        })
        .collect();
    Json(json!({
        "actions": res.catalog.actions(),
        "affects": affects,
        "emoji": res.tables.emoji.entries(),
        "strip_len": cfg.strip_len,
        "stream_fps": cfg.stream_fps,
        "wheelbase_m": cfg.wheelbase_m,
    }))
    .into_response()
}

/// Bind and serve until Ctrl-C.
pub async fn serve(session: Arc<Session>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
