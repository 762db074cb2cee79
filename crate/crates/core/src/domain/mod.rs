//! Domain model for a coimagination program: who takes part, what the
//! session is about, how long each phase lasts, and the session state
//! machine that enforces the turn protocol.

mod memory;
mod session;

pub use memory::{
    build_memory_task, CompletedSession, Guess, MemoryItem, MemoryTask, MemoryTaskError,
};
pub use session::{
    ActiveSlot, Command, CommandKind, Phase, PhaseView, Proposal, Round, SessionState, Transition,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::images::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParticipantId(pub u32);

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThemeId(pub u32);

impl fmt::Display for ThemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn numbered(n: u32) -> Self {
        SessionId(format!("session-{n:04}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Supported interface languages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locale {
    En,
    Ja,
}

impl Locale {
    pub const ALL: [Locale; 2] = [Locale::En, Locale::Ja];

    pub fn code(self) -> &'static str {
        match self {
            Locale::En => "en",
            Locale::Ja => "ja",
        }
    }
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unsupported locale `{0}`")]
pub struct UnknownLocale(pub String);

impl FromStr for Locale {
    type Err = UnknownLocale;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" => Ok(Locale::En),
            "ja" => Ok(Locale::Ja),
            other => Err(UnknownLocale(other.to_string())),
        }
    }
}

/// How a piece of participant input reached the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    Voice,
    Typed,
    /// Facilitator repeated the participant's answer by voice on their behalf.
    Assisted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    pub display_name: String,
    pub active: bool,
    pub registered_via: InputSource,
    pub seat_order: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub id: ThemeId,
    pub titles: BTreeMap<Locale, String>,
    pub active: bool,
}

impl Theme {
    pub fn title(&self, locale: Locale) -> &str {
        self.titles
            .get(&locale)
            .map(String::as_str)
            .unwrap_or_default()
    }
}

/// Phase durations and language for a session. Durations are whole seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub locale: Locale,
    /// Cap on the thinking period before the speaking round; `None` skips
    /// the period entirely.
    pub prep_before_speaking_s: Option<u32>,
    pub speaking_slot_s: u32,
    pub qa_slot_s: u32,
    /// When set, QA preparation expires after `prep_before_speaking_s`;
    /// otherwise it only ends on a ready signal.
    pub qa_prep_timed: bool,
}

impl SessionConfig {
    /// Five-minute rounds, no preparation period.
    pub fn trial_run(locale: Locale) -> Self {
        SessionConfig {
            locale,
            prep_before_speaking_s: None,
            speaking_slot_s: 300,
            qa_slot_s: 300,
            qa_prep_timed: false,
        }
    }

    /// Ninety-second rounds with up to five minutes of preparation.
    pub fn elder(locale: Locale) -> Self {
        SessionConfig {
            locale,
            prep_before_speaking_s: Some(300),
            speaking_slot_s: 90,
            qa_slot_s: 90,
            qa_prep_timed: false,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.speaking_slot_s == 0 {
            return Err(DomainError::InvalidDuration {
                field: "speaking_slot_s".into(),
            });
        }
        if self.qa_slot_s == 0 {
            return Err(DomainError::InvalidDuration {
                field: "qa_slot_s".into(),
            });
        }
        if self.qa_prep_timed && self.prep_before_speaking_s.is_none() {
            return Err(DomainError::InvalidDuration {
                field: "qa_prep_timed needs prep_before_speaking_s".into(),
            });
        }
        Ok(())
    }

    pub(crate) fn qa_prep_s(&self) -> Option<u32> {
        if self.qa_prep_timed {
            self.prep_before_speaking_s
        } else {
            None
        }
    }
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig::elder(Locale::En)
    }
}

/// A participant's answer to the session theme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub participant_id: ParticipantId,
    pub keyword: String,
    pub image: Option<ImageRef>,
    pub source: InputSource,
}

impl Topic {
    pub fn is_confirmed(&self) -> bool {
        self.image.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum DomainError {
    #[error("`{command}` is not accepted in phase {phase}")]
    WrongPhase { phase: Phase, command: CommandKind },
    #[error("name is empty")]
    EmptyName,
    #[error("an active participant is already named `{name}`")]
    DuplicateActiveName { name: String },
    #[error("no name proposal to confirm")]
    NothingToConfirm,
    #[error("invalid duration: {field}")]
    InvalidDuration { field: String },
    #[error("configuration cannot change while a session is in progress")]
    SessionInProgress,
    #[error("no theme matches `{utterance}`")]
    UnknownTheme { utterance: String },
    #[error("theme {theme} is not active")]
    InactiveTheme { theme: ThemeId },
    #[error("theme title missing for locale {locale}")]
    MissingThemeTitle { locale: Locale },
    #[error("unknown participant {participant}")]
    UnknownParticipant { participant: ParticipantId },
    #[error("it is {expected}'s turn, not {got}'s")]
    OutOfTurn {
        expected: ParticipantId,
        got: ParticipantId,
    },
    #[error("topic keyword is empty")]
    EmptyKeyword,
    #[error("no pending topic for {participant}")]
    NoPendingTopic { participant: ParticipantId },
    #[error("no active participants")]
    NoActiveParticipants,
    #[error("clock went backwards: {at} < {last}")]
    ClockWentBackwards { last: Timestamp, at: Timestamp },
}
