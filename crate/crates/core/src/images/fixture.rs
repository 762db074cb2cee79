use std::path::{Path, PathBuf};

use async_trait::async_trait;

use super::{ImageError, ImageSearch, ProviderKind};
use crate::domain::Locale;

const SCHEME: &str = "fixture://";

/// Offline provider backed by `<dir>/<locale>/<keyword>/`, where the files
/// of a keyword directory are its results ranked by file name.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    dir: PathBuf,
}

impl FixtureProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureProvider { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Directory name for a keyword: lowercase words joined by `_`, with
/// path separators and dots removed.
pub fn fixture_keyword(keyword: &str) -> String {
    keyword
        .split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !matches!(c, '/' | '\\' | '.' | ':' | '\0'))
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

#[async_trait]
impl ImageSearch for FixtureProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Fixture
    }

    async fn search(&self, keyword: &str, locale: Locale) -> Result<Vec<String>, ImageError> {
        let name = fixture_keyword(keyword);
        let dir = self.dir.join(locale.code()).join(&name);
        let entries = match std::fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(_) => return Ok(Vec::new()),
        };
        let mut files: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|f| !f.starts_with('.'))
            .collect();
        files.sort();
        Ok(files
            .into_iter()
            .map(|f| format!("{SCHEME}{}/{name}/{f}", locale.code()))
            .collect())
    }

    async fn fetch(&self, url: &str) -> Result<Vec<u8>, ImageError> {
        let rel = url
            .strip_prefix(SCHEME)
            .ok_or(ImageError::UnsupportedFormat)?;
        if rel.split('/').any(|part| part == ".." || part.is_empty()) {
            return Err(ImageError::UnsupportedFormat);
        }
        std::fs::read(self.dir.join(rel)).map_err(ImageError::storage)
    }
}
