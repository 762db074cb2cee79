//! Server-sent event stream of one session's log: history from a given seq,
//! then the live tail.

use std::convert::Infallible;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::response::sse::{Event, KeepAlive, Sse};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use tokio_stream::wrappers::BroadcastStream;

use coimagine_core::domain::SessionId;
use coimagine_core::SessionEvent;

use crate::{ApiError, AppState};

#[derive(Deserialize)]
pub struct StreamQuery {
    from_seq: Option<u64>,
}

fn to_event(ev: &SessionEvent) -> Event {
    let kind = serde_json::to_value(&ev.entry.body)
        .ok()
        .and_then(|v| v["kind"].as_str().map(str::to_string))
        .unwrap_or_else(|| "entry".to_string());
    Event::default()
        .id(ev.entry.seq.to_string())
        .event(kind)
        .json_data(ev)
        .expect("session events serialize")
}

/// `from_seq` defaults to one past the `Last-Event-ID` header, so a browser
/// reconnecting on its own resumes without gaps or repeats.
pub async fn stream(
    State(app): State<AppState>,
    Path(sid): Path<String>,
    Query(q): Query<StreamQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let last_seen = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let from_seq = q.from_seq.or(last_seen.map(|s| s + 1)).unwrap_or(0);
    let session = SessionId(sid);
    let (history, rx) = app.coordinator.events_from(&session, from_seq)?;
    let next = history.last().map_or(from_seq, |e| e.entry.seq + 1);

    let live = BroadcastStream::new(rx)
        .scan(next, move |next, item| {
            let out = match item {
                Ok(ev) if ev.session_id == session && ev.entry.seq >= *next => {
                    *next = ev.entry.seq + 1;
                    Some(Some(ev))
                }
                Ok(_) => Some(None),
                // A subscriber that fell behind is closed; it reconnects
                // with its last seen seq and replays from the log.
                Err(_) => None,
            };
            futures::future::ready(out)
        })
        .filter_map(|ev| futures::future::ready(ev.map(|ev| Ok(to_event(&ev)))));
    let replay = stream::iter(history.into_iter().map(|ev| Ok(to_event(&ev))));
    Ok(Sse::new(replay.chain(live)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
