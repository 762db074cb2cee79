//! Client for a Custom-Search-style JSON image search endpoint.

use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;

use super::{map_transport, ImageError, ImageSearch, ProviderKind};
use crate::domain::Locale;

/// Environment variable holding the API key.
pub const KEY_ENV: &str = "COIMAGINE_SEARCH_KEY";
/// Environment variable holding the search engine id.
pub const ENGINE_ID_ENV: &str = "COIMAGINE_SEARCH_ENGINE_ID";

pub const DEFAULT_ENDPOINT: &str = "https://www.googleapis.com/customsearch/v1";

/// A string that never prints its contents.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Secret(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

#[derive(Debug, Clone)]
pub struct Credentials {
    pub key: Secret,
    pub engine_id: Secret,
}

impl Credentials {
    /// Reads both variables; `None` if either is unset or blank.
    pub fn from_env() -> Option<Self> {
        let read = |name| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.trim().is_empty())
                .map(Secret::new)
        };
        Some(Credentials {
            key: read(KEY_ENV)?,
            engine_id: read(ENGINE_ID_ENV)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LiveProvider {
    client: reqwest::Client,
    endpoint: String,
    credentials: Credentials,
}

#[derive(Deserialize)]
struct SearchResponse {
    #[serde(default)]
    items: Vec<SearchItem>,
}

#[derive(Deserialize)]
struct SearchItem {
    link: String,
}

impl LiveProvider {
    pub fn new(
        endpoint: Option<String>,
        credentials: Credentials,
        timeout: Duration,
    ) -> Result<Self, ImageError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ImageError::storage(e.without_url()))?;
        Ok(LiveProvider {
            client,
            endpoint: endpoint.unwrap_or_else(|| DEFAULT_ENDPOINT.to_string()),
            credentials,
        })
    }

    fn region(locale: Locale) -> (&'static str, &'static str) {
        match locale {
            Locale::En => ("lang_en", "us"),
            Locale::Ja => ("lang_ja", "jp"),
        }
    }
}

#[async_trait]
impl ImageSearch for LiveProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }

    async fn search(&self, keyword: &str, locale: Locale) -> Result<Vec<String>, ImageError> {
        let (lr, gl) = Self::region(locale);
        let resp = self
            .client
            .get(&self.endpoint)
            .query(&[
                ("key", self.credentials.key.expose()),
                ("cx", self.credentials.engine_id.expose()),
                ("q", keyword),
                ("searchType", "image"),
                ("num", "1"),
                ("safe", "active"),
                ("lr", lr),
                ("gl", gl),
                ("hl", locale.code()),
            ])
            .send()
            .await
            .map_err(map_transport)?;
        let status = resp.status();
        if !status.is_success() {
            tracing::warn!(status = status.as_u16(), "image search rejected");
            return Err(ImageError::ProviderRejected {
                status: status.as_u16(),
            });
        }
        let body: SearchResponse = resp.json().await.map_err(map_transport)?;
        Ok(body.items.into_iter().map(|i| i.link).collect())
    }

    async fn fetch(&self, url: &str) -> Result<Vec<u8>, ImageError> {
        let resp = self.client.get(url).send().await.map_err(map_transport)?;
        if !resp.status().is_success() {
            return Err(ImageError::ProviderRejected {
                status: resp.status().as_u16(),
            });
        }
        Ok(resp.bytes().await.map_err(map_transport)?.to_vec())
    }
}
