//! Topic images: a ranked image search behind [`ImageSearch`], and an
//! [`ImageService`] that takes the rank-1 hit, stores it in a
//! content-addressed cache and remembers it per (keyword, locale).

mod fixture;
mod live;

pub use fixture::{fixture_keyword, FixtureProvider};
pub use live::{Credentials, LiveProvider, Secret, ENGINE_ID_ENV, KEY_ENV};

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::domain::Locale;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Live,
    Fixture,
    Manual,
}

/// A stored image chosen for a topic. `local_path` is relative to the
/// image cache directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub source_url: String,
    pub local_path: PathBuf,
    pub query: String,
    pub provider: ProviderKind,
    pub fetched_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageError {
    #[error("search keyword is empty")]
    EmptyKeyword,
    #[error("no image results for `{query}`")]
    NoResults { query: String },
    #[error("image provider timed out")]
    ProviderTimeout,
    #[error("image provider rejected the request (status {status})")]
    ProviderRejected { status: u16 },
    #[error("image provider unreachable: {reason}")]
    ProviderUnreachable { reason: String },
    #[error("unsupported image format")]
    UnsupportedFormat,
    #[error("image payload is empty")]
    EmptyPayload,
    #[error("image cache: {reason}")]
    Storage { reason: String },
}

impl ImageError {
    /// Stable identifier for API bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            ImageError::EmptyKeyword => "empty_keyword",
            ImageError::NoResults { .. } => "no_results",
            ImageError::ProviderTimeout => "provider_timeout",
            ImageError::ProviderRejected { .. } => "provider_rejected",
            ImageError::ProviderUnreachable { .. } => "provider_unreachable",
            ImageError::UnsupportedFormat => "unsupported_format",
            ImageError::EmptyPayload => "empty_payload",
            ImageError::Storage { .. } => "storage",
        }
    }

    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            ImageError::NoResults { .. }
                | ImageError::ProviderTimeout
                | ImageError::ProviderRejected { .. }
                | ImageError::ProviderUnreachable { .. }
        )
    }

    fn storage(e: impl std::fmt::Display) -> Self {
        ImageError::Storage {
            reason: e.to_string(),
        }
    }
}

/// A ranked image search.
#[async_trait]
pub trait ImageSearch: Send + Sync {
    fn kind(&self) -> ProviderKind;

    /// Result URLs, best first.
    async fn search(&self, keyword: &str, locale: Locale) -> Result<Vec<String>, ImageError>;

    async fn fetch(&self, url: &str) -> Result<Vec<u8>, ImageError>;
}

/// An image supplied by the facilitator when search fails or picks the
/// wrong thing.
#[derive(Debug, Clone)]
pub enum ManualImage {
    Bytes(Vec<u8>),
    Url(String),
}

type CacheKey = (String, Locale);

pub struct ImageService {
    provider: Arc<dyn ImageSearch>,
    cache_dir: PathBuf,
    caching: bool,
    index: Mutex<HashMap<CacheKey, ImageRef>>,
    inflight: Mutex<HashMap<CacheKey, Arc<tokio::sync::Mutex<()>>>>,
    provider_calls: AtomicU64,
    http: reqwest::Client,
}

impl ImageService {
    pub fn new(
        provider: Arc<dyn ImageSearch>,
        cache_dir: impl Into<PathBuf>,
    ) -> Result<Self, ImageError> {
        let cache_dir = cache_dir.into();
        std::fs::create_dir_all(&cache_dir).map_err(ImageError::storage)?;
        Ok(ImageService {
            provider,
            cache_dir,
            caching: true,
            index: Mutex::new(HashMap::new()),
            inflight: Mutex::new(HashMap::new()),
            provider_calls: AtomicU64::new(0),
            http: reqwest::Client::builder()
                .timeout(Duration::from_secs(10))
                .build()
                .map_err(|e| ImageError::storage(e.without_url()))?,
        })
    }

    /// Disables the (keyword, locale) lookup cache; files are still stored.
    pub fn without_cache(mut self) -> Self {
        self.caching = false;
        self
    }

    pub fn provider_kind(&self) -> ProviderKind {
        self.provider.kind()
    }

    /// Number of searches sent to the provider so far.
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn cache_dir(&self) -> &Path {
        &self.cache_dir
    }

    pub fn resolve(&self, image: &ImageRef) -> PathBuf {
        self.cache_dir.join(&image.local_path)
    }

    /// The provider's rank-1 image for `keyword`, stored locally. Concurrent
    /// requests for the same key share one provider call.
    pub async fn search_top_image(
        &self,
        keyword: &str,
        locale: Locale,
        at: Timestamp,
    ) -> Result<ImageRef, ImageError> {
        let query = keyword.trim();
        if query.is_empty() {
            return Err(ImageError::EmptyKeyword);
        }
        let key = (fixture_keyword(query), locale);
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }
        let gate = {
            let mut inflight = self.inflight.lock().expect("inflight lock");
            inflight.entry(key.clone()).or_default().clone()
        };
        let _guard = gate.lock().await;
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }
        self.provider_calls.fetch_add(1, Ordering::SeqCst);
        let urls = self.provider.search(query, locale).await?;
        let top = urls
            .into_iter()
            .next()
            .ok_or_else(|| ImageError::NoResults {
                query: query.to_string(),
            })?;
        let bytes = self.provider.fetch(&top).await?;
        if bytes.is_empty() {
            return Err(ImageError::EmptyPayload);
        }
        let ext = sniff_format(&bytes).unwrap_or_else(|| extension_of(&top));
        let local_path = self.store(&bytes, ext)?;
        let image = ImageRef {
            source_url: top,
            local_path,
            query: query.to_string(),
            provider: self.provider.kind(),
            fetched_at: at,
        };
        if self.caching {
            self.index
                .lock()
                .expect("index lock")
                .insert(key, image.clone());
        }
        Ok(image)
    }

    /// Stores a facilitator-supplied image for the topic `keyword`.
    pub async fn attach_manual_image(
        &self,
        keyword: &str,
        payload: ManualImage,
        at: Timestamp,
    ) -> Result<ImageRef, ImageError> {
        let (bytes, source_url) = match payload {
            ManualImage::Bytes(bytes) => (bytes, None),
            ManualImage::Url(url) => {
                let bytes = self.download(&url).await?;
                (bytes, Some(url))
            }
        };
        if bytes.is_empty() {
            return Err(ImageError::EmptyPayload);
        }
        let ext = sniff_format(&bytes).ok_or(ImageError::UnsupportedFormat)?;
        let local_path = self.store(&bytes, ext)?;
        let source_url = source_url.unwrap_or_else(|| format!("manual:{}", local_path.display()));
        Ok(ImageRef {
            source_url,
            local_path,
            query: keyword.to_string(),
            provider: ProviderKind::Manual,
            fetched_at: at,
        })
    }

    fn cached(&self, key: &CacheKey) -> Option<ImageRef> {
        if !self.caching {
            return None;
        }
        self.index.lock().expect("index lock").get(key).cloned()
    }

    async fn download(&self, url: &str) -> Result<Vec<u8>, ImageError> {
        let resp = self.http.get(url).send().await.map_err(map_transport)?;
        if !resp.status().is_success() {
            return Err(ImageError::ProviderRejected {
                status: resp.status().as_u16(),
            });
        }
        Ok(resp.bytes().await.map_err(map_transport)?.to_vec())
    }

    /// Writes `bytes` under their SHA-256 digest, atomically.
    fn store(&self, bytes: &[u8], ext: &str) -> Result<PathBuf, ImageError> {
        let name = PathBuf::from(format!("{}.{ext}", hex::encode(Sha256::digest(bytes))));
        let target = self.cache_dir.join(&name);
        if !target.exists() {
            let mut tmp =
                tempfile::NamedTempFile::new_in(&self.cache_dir).map_err(ImageError::storage)?;
            tmp.write_all(bytes).map_err(ImageError::storage)?;
            tmp.persist(&target).map_err(ImageError::storage)?;
        }
        Ok(name)
    }
}

pub(crate) fn map_transport(e: reqwest::Error) -> ImageError {
    if e.is_timeout() {
        ImageError::ProviderTimeout
    } else if let Some(status) = e.status() {
        ImageError::ProviderRejected {
            status: status.as_u16(),
        }
    } else {
        ImageError::ProviderUnreachable {
            reason: e.without_url().to_string(),
        }
    }
}

/// File extension from the image's magic bytes.
pub fn sniff_format(bytes: &[u8]) -> Option<&'static str> {
    match bytes {
        [0xFF, 0xD8, 0xFF, ..] => Some("jpg"),
        [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A, ..] => Some("png"),
        [b'G', b'I', b'F', b'8', ..] => Some("gif"),
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => Some("webp"),
        _ => None,
    }
}

fn extension_of(url: &str) -> &'static str {
    let path = url.split(['?', '#']).next().unwrap_or(url);
    match path
        .rsplit('.')
        .next()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "jpg",
        Some("png") => "png",
        Some("gif") => "gif",
        Some("webp") => "webp",
        _ => "img",
    }
}
