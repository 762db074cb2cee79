//! Locale pack files.
//!
//! A pack is a small UTF-8 document with three sections:
//!
//! ```text
//! [commands]
//! confirm = yes, save
//!
//! [labels]
//! closing.thank_you = Thank you for joining today!
//!
//! [strip_patterns]
//! topic.prefix = my favorite food is, i like
//! ```
//!
//! Command and strip-pattern values are comma-separated lists; label values
//! are taken verbatim. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::text::normalize;
use super::KeywordContext;
use crate::domain::Locale;

/// Canonical command keys of the `[commands]` section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonicalCommand {
    Register,
    StartSession,
    Confirm,
    Back,
    Ready,
}

impl CanonicalCommand {
    pub const ALL: [CanonicalCommand; 5] = [
        CanonicalCommand::Register,
        CanonicalCommand::StartSession,
        CanonicalCommand::Confirm,
        CanonicalCommand::Back,
        CanonicalCommand::Ready,
    ];

    pub fn key(self) -> &'static str {
        match self {
            CanonicalCommand::Register => "register",
            CanonicalCommand::StartSession => "start_session",
            CanonicalCommand::Confirm => "confirm",
            CanonicalCommand::Back => "back",
            CanonicalCommand::Ready => "ready",
        }
    }
}

impl FromStr for CanonicalCommand {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.key() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripPosition {
    Prefix,
    Suffix,
}

/// Screen labels every pack must define.
pub const REQUIRED_LABELS: &[&str] = &[
    "home.title",
    "home.register",
    "home.start_session",
    "registration.prompt",
    "registration.confirm_prompt",
    "registration.save",
    "registration.back",
    "registration.typed_placeholder",
    "selection.prompt",
    "topic.prompt",
    "topic.searching",
    "topic.image_unavailable",
    "preparation.prompt",
    "preparation.ready",
    "speaking.title",
    "qa_preparation.prompt",
    "qa.title",
    "round.timer",
    "round.speaker",
    "round.theme",
    "round.topic",
    "closing.thank_you",
    "banner.reconnecting",
    "banner.typed_only",
];

#[derive(Debug, Error)]
pub enum PackError {
    #[error("no locale pack for `{locale}`")]
    MissingLocale { locale: String },
    #[error("locale pack {locale} is incomplete: missing {missing}")]
    IncompletePack { locale: Locale, missing: String },
    #[error("locale pack {locale}, line {line}: {message}")]
    Syntax {
        locale: Locale,
        line: usize,
        message: String,
    },
    #[error("reading locale pack: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalePack {
    pub locale: Locale,
    pub commands: BTreeMap<CanonicalCommand, Vec<String>>,
    pub labels: BTreeMap<String, String>,
    pub strip_patterns: BTreeMap<(KeywordContext, StripPosition), Vec<String>>,
}

const BUILTIN_EN: &str = include_str!("../../locales/en.pack");
const BUILTIN_JA: &str = include_str!("../../locales/ja.pack");

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Commands,
    Labels,
    StripPatterns,
}

impl LocalePack {
    /// The packs compiled into the crate.
    pub fn builtin(locale: Locale) -> LocalePack {
        let text = match locale {
            Locale::En => BUILTIN_EN,
            Locale::Ja => BUILTIN_JA,
        };
        LocalePack::parse(locale, text).expect("built-in locale pack is valid")
    }

    pub fn parse(locale: Locale, text: &str) -> Result<LocalePack, PackError> {
        let mut pack = LocalePack {
            locale,
            commands: BTreeMap::new(),
            labels: BTreeMap::new(),
            strip_patterns: BTreeMap::new(),
        };
        let mut section = Section::None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let syntax = |message: String| PackError::Syntax {
                locale,
                line: i + 1,
                message,
            };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = match name.trim() {
                    "commands" => Section::Commands,
                    "labels" => Section::Labels,
                    "strip_patterns" => Section::StripPatterns,
                    other => return Err(syntax(format!("unknown section [{other}]"))),
                };
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match section {
                Section::None => return Err(syntax("entry outside of a section".into())),
                Section::Commands => {
                    let cmd: CanonicalCommand = key
                        .parse()
                        .map_err(|_| syntax(format!("unknown command `{key}`")))?;
                    pack.commands
                        .entry(cmd)
                        .or_default()
                        .extend(split_forms(value));
                }
                Section::Labels => {
                    pack.labels.insert(key.to_string(), value.to_string());
                }
                Section::StripPatterns => {
                    let slot = parse_strip_key(key)
                        .ok_or_else(|| syntax(format!("unknown strip pattern key `{key}`")))?;
                    pack.strip_patterns
                        .entry(slot)
                        .or_default()
                        .extend(split_forms(value));
                }
            }
        }
        pack.validate()?;
        Ok(pack)
    }

    fn validate(&self) -> Result<(), PackError> {
        let incomplete = |missing: String| PackError::IncompletePack {
            locale: self.locale,
            missing,
        };
        for cmd in CanonicalCommand::ALL {
            if self.commands.get(&cmd).is_none_or(|f| f.is_empty()) {
                return Err(incomplete(format!("command `{}`", cmd.key())));
            }
        }
        for label in REQUIRED_LABELS {
            if self.labels.get(*label).is_none_or(|l| l.is_empty()) {
                return Err(incomplete(format!("label `{label}`")));
            }
        }
        Ok(())
    }

    /// Renders the pack in its file format; parsing the output yields an
    /// equal pack.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("[commands]\n");
        for (cmd, forms) in &self.commands {
            let _ = writeln!(out, "{} = {}", cmd.key(), forms.join(", "));
        }
        out.push_str("\n[labels]\n");
        for (key, value) in &self.labels {
            let _ = writeln!(out, "{key} = {value}");
        }
        out.push_str("\n[strip_patterns]\n");
        for ((ctx, pos), patterns) in &self.strip_patterns {
            let _ = writeln!(out, "{} = {}", strip_key(*ctx, *pos), patterns.join(", "));
        }
        out
    }

    pub fn surface_forms(&self, cmd: CanonicalCommand) -> &[String] {
        self.commands
            .get(&cmd)
            .map(Vec::as_slice)
            .unwrap_or_default()
    }

    /// Canonical command whose surface forms include `folded`.
    pub fn command_for(&self, folded: &str) -> Option<CanonicalCommand> {
        self.commands
            .iter()
            .find(|(_, forms)| forms.iter().any(|f| f == folded))
            .map(|(cmd, _)| *cmd)
    }

    pub fn label<'a>(&'a self, key: &'a str) -> &'a str {
        self.labels.get(key).map(String::as_str).unwrap_or(key)
    }

    pub fn patterns(&self, ctx: KeywordContext, pos: StripPosition) -> &[String] {
        self.strip_patterns
            .get(&(ctx, pos))
            .map(Vec::as_slice)
            .unwrap_or_default()
    }
}

fn split_forms(value: &str) -> impl Iterator<Item = String> + '_ {
    value
        .split(',')
        .map(|f| normalize(f).to_lowercase())
        .filter(|f| !f.is_empty())
}

fn strip_key(ctx: KeywordContext, pos: StripPosition) -> String {
    let ctx = match ctx {
        KeywordContext::Name => "name",
        KeywordContext::Topic => "topic",
    };
    let pos = match pos {
        StripPosition::Prefix => "prefix",
        StripPosition::Suffix => "suffix",
    };
    format!("{ctx}.{pos}")
}

fn parse_strip_key(key: &str) -> Option<(KeywordContext, StripPosition)> {
    let (ctx, pos) = key.split_once('.')?;
    let ctx = match ctx {
        "name" => KeywordContext::Name,
        "topic" => KeywordContext::Topic,
        _ => return None,
    };
    let pos = match pos {
        "prefix" => StripPosition::Prefix,
        "suffix" => StripPosition::Suffix,
        _ => return None,
    };
    Some((ctx, pos))
}

/// Loads `<dir>/<code>.pack`, or the built-in pack when `dir` is `None`.
pub fn load_locale_pack(dir: Option<&Path>, code: &str) -> Result<LocalePack, PackError> {
    let locale: Locale = code.parse().map_err(|_| PackError::MissingLocale {
        locale: code.to_string(),
    })?;
    let Some(dir) = dir else {
        return Ok(LocalePack::builtin(locale));
    };
    let path = dir.join(format!("{}.pack", locale.code()));
    let text = match std::fs::read_to_string(&path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(PackError::MissingLocale {
                locale: code.to_string(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    LocalePack::parse(locale, &text)
}

/// Both packs, indexed by locale.
#[derive(Debug, Clone)]
pub struct LocalePacks {
    en: LocalePack,
    ja: LocalePack,
}

impl LocalePacks {
    pub fn builtin() -> Self {
        LocalePacks {
            en: LocalePack::builtin(Locale::En),
            ja: LocalePack::builtin(Locale::Ja),
        }
    }

    pub fn load(dir: Option<&Path>) -> Result<Self, PackError> {
        Ok(LocalePacks {
            en: load_locale_pack(dir, "en")?,
            ja: load_locale_pack(dir, "ja")?,
        })
    }

    pub fn get(&self, locale: Locale) -> &LocalePack {
        match locale {
            Locale::En => &self.en,
            Locale::Ja => &self.ja,
        }
    }
}

impl Default for LocalePacks {
    fn default() -> Self {
        Self::builtin()
    }
}
