//! Turning recognized speech (or typed text) into protocol commands.
//!
//! Matching is exact after normalization: an utterance is a command only if
//! it equals one of the pack's surface forms. Polite sentence framing around
//! names and topics ("I am ...", "... desu") is removed by the pack's strip
//! patterns in [`extract_keyword`].

mod pack;
mod text;

pub use pack::{
    load_locale_pack, CanonicalCommand, LocalePack, LocalePacks, PackError, StripPosition,
    REQUIRED_LABELS,
};
pub use text::normalize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Phase, Theme, ThemeId};
use text::{strip_prefix_ci, strip_suffix_ci};

/// What an utterance means in the current phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", content = "value", rename_all = "snake_case")]
pub enum SpokenCommand {
    Register,
    StartSession,
    Confirm,
    Back,
    Ready,
    SelectTheme(ThemeId),
    /// Content for a name or topic prompt.
    FreeText(String),
    NoMatch,
}

impl From<CanonicalCommand> for SpokenCommand {
    fn from(cmd: CanonicalCommand) -> Self {
        match cmd {
            CanonicalCommand::Register => SpokenCommand::Register,
            CanonicalCommand::StartSession => SpokenCommand::StartSession,
            CanonicalCommand::Confirm => SpokenCommand::Confirm,
            CanonicalCommand::Back => SpokenCommand::Back,
            CanonicalCommand::Ready => SpokenCommand::Ready,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordContext {
    Name,
    Topic,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("utterance is empty")]
    EmptyUtterance,
}

/// Interprets `utterance` for the given phase. Command surface forms win in
/// every phase; theme titles are matched during session selection; anything
/// else is free text where the screen asks for content and `NoMatch`
/// elsewhere. Only active themes are candidates.
pub fn match_command(
    utterance: &str,
    pack: &LocalePack,
    phase: Phase,
    themes: &[Theme],
) -> SpokenCommand {
    let text = normalize(utterance);
    let folded = text.to_lowercase();
    if folded.is_empty() {
        return SpokenCommand::NoMatch;
    }
    if let Some(cmd) = pack.command_for(&folded) {
        return cmd.into();
    }
    if phase == Phase::SessionSelection {
        let hit = themes
            .iter()
            .filter(|t| t.active)
            .find(|t| normalize(t.title(pack.locale)).to_lowercase() == folded);
        if let Some(theme) = hit {
            return SpokenCommand::SelectTheme(theme.id);
        }
    }
    match phase {
        Phase::Registration | Phase::TopicCollection => SpokenCommand::FreeText(text),
        _ => SpokenCommand::NoMatch,
    }
}

/// Pulls the answer out of a polite full sentence, e.g. "I like fried
/// chicken" gives "fried chicken".
///
/// At most one prefix and one suffix pattern are removed, first match in
/// pack order. A strip that would leave nothing is skipped, and when the
/// stripped text could itself be stripped again the sentence is returned
/// unchanged, so applying this to its own output is a no-op.
pub fn extract_keyword(
    utterance: &str,
    pack: &LocalePack,
    context: KeywordContext,
) -> Result<String, GrammarError> {
    let text = normalize(utterance);
    if text.is_empty() {
        return Err(GrammarError::EmptyUtterance);
    }
    let stripped = strip_once(&text, pack, context);
    if stripped == text || strip_once(&stripped, pack, context) != stripped {
        return Ok(text);
    }
    Ok(stripped)
}

fn strip_once(text: &str, pack: &LocalePack, context: KeywordContext) -> String {
    let mut rest = text;
    if let Some(r) = pack
        .patterns(context, StripPosition::Prefix)
        .iter()
        .find_map(|p| strip_prefix_ci(rest, p))
    {
        rest = r;
    }
    if let Some(r) = pack
        .patterns(context, StripPosition::Suffix)
        .iter()
        .find_map(|p| strip_suffix_ci(rest, p))
    {
        rest = r;
    }
    normalize(rest)
}
