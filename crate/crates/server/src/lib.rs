//! HTTP and server-sent-events front end for a [`Coordinator`]. Every
//! screen action of the session UI has an endpoint here, so sessions can be
//! driven headless.

pub mod cli;
mod error;
mod events;

use std::path::{Component, Path as FsPath};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use coimagine_core::audio::RecordingHandle;
use coimagine_core::domain::{
    Command, Guess, InputSource, Locale, ParticipantId, Round, SessionConfig, SessionId, ThemeId,
};
use coimagine_core::images::ManualImage;
use coimagine_core::metrics::{format_percent, Feature, Outcome};
use coimagine_core::{Applied, Coordinator, SimulatedClock};

pub use error::ApiError;

/// Shared handler state. `clock` is set only when the service runs on a
/// simulated clock, which enables the clock-advance endpoint.
#[derive(Clone)]
pub struct AppState {
    pub coordinator: Arc<Coordinator>,
    pub clock: Option<SimulatedClock>,
}

impl AppState {
    pub fn new(coordinator: Coordinator, clock: Option<SimulatedClock>) -> Self {
        AppState {
            coordinator: Arc::new(coordinator),
            clock,
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// A JSON request body. Malformed bodies become 400s in the API's error
/// format; an empty body deserializes as `null`.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let json_declared = req
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("application/json"));
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(e.status(), "malformed", e.body_text()))?;
        if bytes.is_empty() {
            return serde_json::from_str("null")
                .map(Body)
                .map_err(|_| ApiError::bad_request("request body is required"));
        }
        if !json_declared {
            return Err(ApiError::bad_request(
                "content type must be application/json",
            ));
        }
        serde_json::from_slice(&bytes)
            .map(Body)
            .map_err(|e| ApiError::bad_request(e.to_string()))
    }
}

pub fn router(state: AppState) -> Router {
    let chunk_limit = state.coordinator.max_chunk_bytes().saturating_mul(2);
    let mut api = Router::new()
        .route("/session", get(session))
        .route("/session/registration", post(open_registration))
        .route("/session/back", post(back))
        .route("/session/start", post(start_session))
        .route("/session/select", post(select_theme))
        .route("/session/topics", post(submit_topic))
        .route("/session/topics/{participant}/image", post(manual_image))
        .route("/session/ready", post(ready))
        .route("/session/utterance", post(utterance))
        .route("/session/tick", post(tick))
        .route("/session/next", post(next_session))
        .route("/config", get(get_config).put(put_config))
        .route("/participants", get(participants).post(propose_name))
        .route("/participants/confirm", post(confirm_name))
        .route("/participants/{id}/activate", post(activate_participant))
        .route(
            "/participants/{id}/deactivate",
            post(deactivate_participant),
        )
        .route("/themes", get(themes).post(create_theme))
        .route("/themes/{id}/activate", post(activate_theme))
        .route("/themes/{id}/deactivate", post(deactivate_theme))
        .route("/attempts", post(facilitator_mark))
        .route("/recordings", post(begin_recording))
        .route(
            "/recordings/{handle}/chunks",
            post(append_chunk).layer(DefaultBodyLimit::max(chunk_limit)),
        )
        .route("/recordings/{handle}/finalize", post(finalize_recording))
        .route("/sessions", get(sessions))
        .route("/sessions/{sid}/log", get(session_log))
        .route("/sessions/{sid}/events", get(events::stream))
        .route("/sessions/{sid}/report", get(report))
        .route("/sessions/{sid}/report.csv", get(report_csv))
        .route("/sessions/{sid}/recordings", get(recordings))
        .route(
            "/sessions/{sid}/recordings/{round}/{slot}",
            get(recording_audio),
        )
        .route("/images/{*path}", get(image_file))
        .route("/locales/{code}", get(locale_labels))
        .route("/memory", get(memory_task).post(build_memory_task))
        .route("/memory/guesses", post(memory_guess))
        .route("/memory/scores/{participant}", get(memory_score));
    if state.clock.is_some() {
        api = api
            .route("/clock", get(clock_now))
            .route("/clock/advance", post(advance_clock));
    }
    Router::new()
        .route("/health", get(health))
        .nest("/api", api)
        .with_state(state)
}

/// Fires due timers every `period` until the task is dropped. Only needed
/// with a real clock; simulated clocks tick when advanced.
pub fn spawn_ticker(
    coordinator: Arc<Coordinator>,
    period: Duration,
) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            if let Err(e) = coordinator.tick() {
                tracing::error!(error = %e, "timer tick failed");
            }
        }
    })
}

async fn health(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "session_id": app.coordinator.current_session(),
        "provider": app.coordinator.images().provider_kind(),
        "simulated_clock": app.clock.is_some(),
    }))
}

fn run(app: &AppState, command: Command) -> ApiResult<Json<Applied>> {
    Ok(Json(app.coordinator.execute(command)?))
}

async fn session(State(app): State<AppState>) -> ApiResult<Json<serde_json::Value>> {
    let c = &app.coordinator;
    let state = c.snapshot();
    let seq = c.entries(&state.session_id)?.last().map_or(0, |e| e.seq);
    Ok(Json(json!({
        "seq": seq,
        "now": c.clock().now(),
        "active_slot": state.active_slot(),
        "current_turn": state.current_turn(),
        "state": state,
    })))
}

async fn open_registration(State(app): State<AppState>) -> ApiResult<Json<Applied>> {
    run(&app, Command::OpenRegistration)
}

async fn back(State(app): State<AppState>) -> ApiResult<Json<Applied>> {
    run(&app, Command::Back)
}

async fn start_session(State(app): State<AppState>) -> ApiResult<Json<Applied>> {
    run(&app, Command::StartSession)
}

async fn tick(State(app): State<AppState>) -> ApiResult<Json<Applied>> {
    Ok(Json(app.coordinator.tick()?))
}

async fn next_session(State(app): State<AppState>) -> ApiResult<(StatusCode, Json<Applied>)> {
    Ok((
        StatusCode::CREATED,
        Json(app.coordinator.start_next_session()?),
    ))
}

#[derive(Deserialize)]
struct SelectTheme {
    theme: ThemeId,
}

async fn select_theme(
    State(app): State<AppState>,
    Body(req): Body<SelectTheme>,
) -> ApiResult<Json<Applied>> {
    run(&app, Command::SelectTheme { theme: req.theme })
}

fn typed() -> InputSource {
    InputSource::Typed
}

#[derive(Deserialize)]
struct SubmitTopic {
    participant: ParticipantId,
    keyword: String,
    #[serde(default = "typed")]
    source: InputSource,
}

async fn submit_topic(
    State(app): State<AppState>,
    Body(req): Body<SubmitTopic>,
) -> ApiResult<Json<Applied>> {
    let applied = app
        .coordinator
        .submit_topic(req.participant, &req.keyword, req.source)
        .await?;
    Ok(Json(applied))
}

#[derive(Deserialize)]
struct ImageUrl {
    url: String,
}

/// Accepts either `{"url": ...}` as JSON or the image bytes themselves.
async fn manual_image(
    State(app): State<AppState>,
    Path(participant): Path<u32>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<Json<Applied>> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let payload = if is_json {
        let req: ImageUrl =
            serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
        ManualImage::Url(req.url)
    } else {
        ManualImage::Bytes(bytes.to_vec())
    };
    let applied = app
        .coordinator
        .attach_manual_image(ParticipantId(participant), payload)
        .await?;
    Ok(Json(applied))
}

#[derive(Deserialize, Default)]
struct Ready {
    participant: Option<ParticipantId>,
}

async fn ready(
    State(app): State<AppState>,
    Body(req): Body<Option<Ready>>,
) -> ApiResult<Json<Applied>> {
    let participant = req.unwrap_or_default().participant;
    run(&app, Command::Ready { participant })
}

#[derive(Deserialize)]
struct Utterance {
    text: String,
    #[serde(default = "voice")]
    via: InputSource,
    participant: Option<ParticipantId>,
}

fn voice() -> InputSource {
    InputSource::Voice
}

async fn utterance(
    State(app): State<AppState>,
    Body(req): Body<Utterance>,
) -> ApiResult<Json<coimagine_core::coordinator::Heard>> {
    let heard = app
        .coordinator
        .utterance(&req.text, req.via, req.participant)
        .await?;
    Ok(Json(heard))
}

async fn get_config(State(app): State<AppState>) -> Json<SessionConfig> {
    Json(app.coordinator.snapshot().config)
}

async fn put_config(
    State(app): State<AppState>,
    Body(config): Body<SessionConfig>,
) -> ApiResult<Json<Applied>> {
    run(&app, Command::SetConfig { config })
}

async fn participants(State(app): State<AppState>) -> Json<serde_json::Value> {
    let state = app.coordinator.snapshot();
    Json(json!({ "participants": state.participants, "pending_name": state.pending_name }))
}

#[derive(Deserialize)]
struct ProposeName {
    name: String,
    #[serde(default = "typed")]
    via: InputSource,
}

async fn propose_name(
    State(app): State<AppState>,
    Body(req): Body<ProposeName>,
) -> ApiResult<Json<Applied>> {
    run(
        &app,
        Command::ProposeName {
            name: req.name,
            via: req.via,
        },
    )
}

#[derive(Deserialize, Default)]
struct Confirm {
    token: Option<String>,
}

#[derive(Serialize)]
struct Confirmed {
    participant: Option<coimagine_core::domain::Participant>,
    #[serde(flatten)]
    applied: Applied,
}

/// Confirms the pending name. A retry carrying the same token (body
/// `token` or `Idempotency-Key` header) returns the original result.
async fn confirm_name(
    State(app): State<AppState>,
    headers: HeaderMap,
    Body(req): Body<Option<Confirm>>,
) -> ApiResult<(StatusCode, Json<Confirmed>)> {
    let token = req.unwrap_or_default().token.or_else(|| {
        headers
            .get("idempotency-key")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    });
    let applied = app.coordinator.confirm_name(token.as_deref())?;
    let participant = applied
        .state
        .participants
        .iter()
        .max_by_key(|p| p.seat_order)
        .cloned();
    Ok((
        StatusCode::CREATED,
        Json(Confirmed {
            participant,
            applied,
        }),
    ))
}

async fn activate_participant(
    State(app): State<AppState>,
    Path(id): Path<u32>,
) -> ApiResult<Json<Applied>> {
    run(
        &app,
        Command::SetParticipantActive {
            participant: ParticipantId(id),
            active: true,
        },
    )
}

async fn deactivate_participant(
    State(app): State<AppState>,
    Path(id): Path<u32>,
) -> ApiResult<Json<Applied>> {
    run(
        &app,
        Command::SetParticipantActive {
            participant: ParticipantId(id),
            active: false,
        },
    )
}

async fn themes(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "themes": app.coordinator.snapshot().themes }))
}

#[derive(Deserialize)]
struct CreateTheme {
    titles: std::collections::BTreeMap<Locale, String>,
}

async fn create_theme(
    State(app): State<AppState>,
    Body(req): Body<CreateTheme>,
) -> ApiResult<(StatusCode, Json<Applied>)> {
    let applied = app
        .coordinator
        .execute(Command::CreateTheme { titles: req.titles })?;
    Ok((StatusCode::CREATED, Json(applied)))
}

async fn activate_theme(
    State(app): State<AppState>,
    Path(id): Path<u32>,
) -> ApiResult<Json<Applied>> {
    run(
        &app,
        Command::SetThemeActive {
            theme: ThemeId(id),
            active: true,
        },
    )
}

async fn deactivate_theme(
    State(app): State<AppState>,
    Path(id): Path<u32>,
) -> ApiResult<Json<Applied>> {
    run(
        &app,
        Command::SetThemeActive {
            theme: ThemeId(id),
            active: false,
        },
    )
}

#[derive(Deserialize)]
struct Mark {
    session_id: Option<SessionId>,
    feature: Feature,
    participant: ParticipantId,
    outcome: Outcome,
}

async fn facilitator_mark(
    State(app): State<AppState>,
    Body(req): Body<Mark>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let sid = req
        .session_id
        .unwrap_or_else(|| app.coordinator.current_session());
    let seq = app
        .coordinator
        .record_attempt(&sid, req.feature, req.participant, req.outcome)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "seq": seq, "session_id": sid })),
    ))
}

#[derive(Deserialize)]
struct Begin {
    round: Round,
    slot_index: u32,
    participant: ParticipantId,
    media_type: String,
}

async fn begin_recording(
    State(app): State<AppState>,
    Body(req): Body<Begin>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let handle = app.coordinator.begin_recording(
        req.round,
        req.slot_index,
        req.participant,
        &req.media_type,
    )?;
    Ok((StatusCode::CREATED, Json(json!({ "handle": handle }))))
}

async fn append_chunk(
    State(app): State<AppState>,
    Path(handle): Path<u64>,
    bytes: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let coordinator = app.coordinator.clone();
    let byte_len = tokio::task::spawn_blocking(move || {
        coordinator.append_chunk(RecordingHandle(handle), &bytes)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()))??;
    Ok(Json(json!({ "byte_len": byte_len })))
}

async fn finalize_recording(
    State(app): State<AppState>,
    Path(handle): Path<u64>,
) -> ApiResult<Json<coimagine_core::audio::RecordingMeta>> {
    let coordinator = app.coordinator.clone();
    let meta = tokio::task::spawn_blocking(move || {
        coordinator.finalize_recording(RecordingHandle(handle))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()))??;
    Ok(Json(meta))
}

async fn sessions(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "current": app.coordinator.current_session(),
        "sessions": app.coordinator.sessions(),
    }))
}

#[derive(Deserialize)]
struct FromSeq {
    from_seq: Option<u64>,
}

async fn session_log(
    State(app): State<AppState>,
    Path(sid): Path<String>,
    Query(q): Query<FromSeq>,
) -> ApiResult<Json<Vec<coimagine_core::eventlog::LogEntry>>> {
    let (history, _) = app
        .coordinator
        .events_from(&SessionId(sid), q.from_seq.unwrap_or(0))?;
    Ok(Json(history.into_iter().map(|e| e.entry).collect()))
}

async fn report(
    State(app): State<AppState>,
    Path(sid): Path<String>,
) -> ApiResult<Json<coimagine_core::metrics::SessionReport>> {
    Ok(Json(app.coordinator.session_report(&SessionId(sid))?))
}

async fn report_csv(State(app): State<AppState>, Path(sid): Path<String>) -> ApiResult<Response> {
    let report = app.coordinator.session_report(&SessionId(sid))?;
    Ok((
        [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
        report.to_csv(),
    )
        .into_response())
}

async fn recordings(
    State(app): State<AppState>,
    Path(sid): Path<String>,
) -> ApiResult<Json<Vec<coimagine_core::audio::RecordingMeta>>> {
    Ok(Json(app.coordinator.recordings(&SessionId(sid))?))
}

async fn recording_audio(
    State(app): State<AppState>,
    Path((sid, round, slot)): Path<(String, Round, u32)>,
) -> ApiResult<Response> {
    let meta = app
        .coordinator
        .recordings(&SessionId(sid))?
        .into_iter()
        .find(|m| m.round == round && m.slot_index == slot)
        .ok_or_else(|| ApiError::not_found("no recording for that slot"))?;
    let bytes = tokio::fs::read(app.coordinator.recording_path(&meta))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, meta.media_type)], bytes).into_response())
}

/// Serves a cached topic image by the relative path in its `ImageRef`.
async fn image_file(State(app): State<AppState>, Path(path): Path<String>) -> ApiResult<Response> {
    let rel = FsPath::new(&path);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(ApiError::bad_request("invalid image path"));
    }
    let full = app.coordinator.images().cache_dir().join(rel);
    let bytes = tokio::fs::read(&full)
        .await
        .map_err(|_| ApiError::not_found(format!("no image at {path}")))?;
    let media = coimagine_core::images::sniff_format(&bytes).map_or(
        "application/octet-stream",
        |f| match f {
            "jpg" => "image/jpeg",
            "png" => "image/png",
            "gif" => "image/gif",
            "webp" => "image/webp",
            _ => "application/octet-stream",
        },
    );
    Ok(([(header::CONTENT_TYPE, media)], bytes).into_response())
}

async fn locale_labels(
    State(app): State<AppState>,
    Path(code): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let locale: Locale = code
        .parse()
        .map_err(|_| ApiError::not_found(format!("unknown locale {code}")))?;
    let pack = app.coordinator.packs().get(locale);
    Ok(Json(json!({ "locale": locale, "labels": pack.labels })))
}

#[derive(Deserialize, Default)]
struct BuildMemory {
    #[serde(default)]
    seed: u64,
}

async fn build_memory_task(
    State(app): State<AppState>,
    Body(req): Body<Option<BuildMemory>>,
) -> ApiResult<(StatusCode, Json<coimagine_core::domain::MemoryTask>)> {
    let task = app
        .coordinator
        .build_memory_task(req.unwrap_or_default().seed)?;
    Ok((StatusCode::CREATED, Json(task)))
}

async fn memory_task(
    State(app): State<AppState>,
) -> ApiResult<Json<coimagine_core::domain::MemoryTask>> {
    let task = app
        .coordinator
        .memory_task()
        .ok_or_else(|| ApiError::from(coimagine_core::CoordinatorError::NoMemoryTask))?;
    Ok(Json(task))
}

#[derive(Deserialize)]
struct MemoryGuess {
    participant: ParticipantId,
    index: usize,
    owner: ParticipantId,
    theme: ThemeId,
}

async fn memory_guess(
    State(app): State<AppState>,
    Body(req): Body<MemoryGuess>,
) -> ApiResult<StatusCode> {
    app.coordinator.record_guess(
        req.participant,
        req.index,
        Guess {
            owner: req.owner,
            theme: req.theme,
        },
    )?;
    Ok(StatusCode::NO_CONTENT)
}

async fn memory_score(
    State(app): State<AppState>,
    Path(participant): Path<u32>,
) -> ApiResult<Json<serde_json::Value>> {
    let score = app.coordinator.memory_score(ParticipantId(participant))?;
    Ok(Json(json!({
        "participant": participant,
        "numerator": score.numer(),
        "denominator": score.denom(),
        "rate_percent": format_percent(score),
    })))
}

async fn clock_now(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "now": app.coordinator.clock().now() }))
}

#[derive(Deserialize)]
struct Advance {
    #[serde(default)]
    secs: u64,
    #[serde(default)]
    millis: u64,
}

/// Moves the simulated clock forward and fires whatever became due.
async fn advance_clock(
    State(app): State<AppState>,
    Body(req): Body<Advance>,
) -> ApiResult<Json<Applied>> {
    let clock = app
        .clock
        .as_ref()
        .ok_or_else(|| ApiError::not_found("clock is not simulated"))?;
    clock.advance_millis(req.secs * 1000 + req.millis);
    Ok(Json(app.coordinator.tick()?))
}
