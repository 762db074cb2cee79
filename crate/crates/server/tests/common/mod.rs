#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use serde_json::Value;

use coimagine_core::domain::{Locale, SessionConfig};
use coimagine_core::grammar::LocalePacks;
use coimagine_core::images::{FixtureProvider, ImageService};
use coimagine_core::{Coordinator, CoordinatorOptions, SimulatedClock, Timestamp};
use coimagine_server::{router, AppState};

pub const START: Timestamp = Timestamp(1_000);

pub fn fixture_images() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/images")
}

pub fn bundled_log() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/preliminary_experiment.jsonl")
}

pub fn elder() -> SessionConfig {
    SessionConfig::elder(Locale::En)
}

/// A coordinator over the fixture images with its data under `work`.
pub fn coordinator(work: &Path, config: SessionConfig, clock: &SimulatedClock) -> Coordinator {
    let images = ImageService::new(
        Arc::new(FixtureProvider::new(fixture_images())),
        work.join("cache"),
    )
    .unwrap();
    Coordinator::open(
        CoordinatorOptions {
            data_dir: work.join("data"),
            config,
            packs: LocalePacks::builtin(),
        },
        images,
        Arc::new(clock.clone()),
    )
    .unwrap()
}

pub struct Server {
    pub base: String,
    pub state: AppState,
    pub clock: SimulatedClock,
    pub http: reqwest::Client,
}

pub async fn serve(coordinator: Coordinator, clock: SimulatedClock) -> Server {
    let state = AppState::new(coordinator, Some(clock.clone()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server {
        base: format!("http://{addr}"),
        state,
        clock,
        http: reqwest::Client::new(),
    }
}

pub async fn start(work: &Path, config: SessionConfig) -> Server {
    let clock = SimulatedClock::new(START);
    serve(coordinator(work, config, &clock), clock).await
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let resp = self
            .http
            .post(self.url(path))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub async fn post_empty(&self, path: &str) -> (u16, Value) {
        let resp = self.http.post(self.url(path)).send().await.unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub async fn put(&self, path: &str, body: Value) -> (u16, Value) {
        let resp = self
            .http
            .put(self.url(path))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let resp = self.http.get(self.url(path)).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    /// Posts and insists on a 2xx.
    pub async fn ok(&self, path: &str, body: Value) -> Value {
        let (status, v) = self.post(path, body).await;
        assert!((200..300).contains(&status), "POST {path} -> {status} {v}");
        v
    }

    pub async fn phase(&self) -> String {
        self.get("/api/session").await.1["state"]["phase"]
            .as_str()
            .unwrap()
            .to_string()
    }

    pub async fn advance(&self, secs: u64) -> Value {
        self.ok("/api/clock/advance", serde_json::json!({ "secs": secs }))
            .await
    }
}

/// One server-sent event.
#[derive(Debug, Clone, PartialEq)]
pub struct Sse {
    pub id: u64,
    pub event: String,
    pub data: Value,
}

/// Reads events from an open SSE response until `n` have arrived or
/// `wait` passes without one.
pub struct SseReader {
    body: futures::stream::BoxStream<'static, reqwest::Result<axum::body::Bytes>>,
    buf: Vec<u8>,
}

impl SseReader {
    pub async fn open(
        server: &Server,
        sid: &str,
        query: &str,
        last_event_id: Option<u64>,
    ) -> Result<Self, (u16, Value)> {
        let mut req = server
            .http
            .get(server.url(&format!("/api/sessions/{sid}/events{query}")));
        if let Some(id) = last_event_id {
            req = req.header("Last-Event-ID", id.to_string());
        }
        let resp = req.send().await.unwrap();
        if !resp.status().is_success() {
            let status = resp.status().as_u16();
            return Err((status, resp.json().await.unwrap_or(Value::Null)));
        }
        Ok(SseReader {
            body: resp.bytes_stream().boxed(),
            buf: Vec::new(),
        })
    }

    fn parse_one(&mut self) -> Option<Sse> {
        loop {
            let end = self.buf.windows(2).position(|w| w == b"\n\n")?;
            let raw: Vec<u8> = self.buf.drain(..end + 2).collect();
            let block = String::from_utf8(raw).unwrap();
            let (mut id, mut event, mut data) = (None, String::new(), String::new());
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = v.trim().parse().ok();
                } else if let Some(v) = line.strip_prefix("event:") {
                    event = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            // Keep-alive comments carry no id.
            if let Some(id) = id {
                return Some(Sse {
                    id,
                    event,
                    data: serde_json::from_str(&data).unwrap(),
                });
            }
        }
    }

    pub async fn take(&mut self, n: usize, wait: Duration) -> Vec<Sse> {
        let mut out = Vec::new();
        while out.len() < n {
            if let Some(ev) = self.parse_one() {
                out.push(ev);
                continue;
            }
            match tokio::time::timeout(wait, self.body.next()).await {
                Ok(Some(Ok(chunk))) => self.buf.extend_from_slice(&chunk),
                _ => break,
            }
        }
        out
    }
}
