use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    CompletedSession, DomainError, InputSource, Locale, Participant, ParticipantId, SessionConfig,
    SessionId, Theme, ThemeId, Topic,
};
use crate::clock::Timestamp;
use crate::images::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Home,
    Registration,
    SessionSelection,
    TopicCollection,
    Preparation,
    Speaking,
    QaPreparation,
    Qa,
    Closing,
}

impl Phase {
    pub const ALL: [Phase; 9] = [
        Phase::Home,
        Phase::Registration,
        Phase::SessionSelection,
        Phase::TopicCollection,
        Phase::Preparation,
        Phase::Speaking,
        Phase::QaPreparation,
        Phase::Qa,
        Phase::Closing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Home => "home",
            Phase::Registration => "registration",
            Phase::SessionSelection => "session_selection",
            Phase::TopicCollection => "topic_collection",
            Phase::Preparation => "preparation",
            Phase::Speaking => "speaking",
            Phase::QaPreparation => "qa_preparation",
            Phase::Qa => "qa",
            Phase::Closing => "closing",
        }
    }

    /// Phases after theme selection; the roster and durations are frozen.
    pub fn in_progress(self) -> bool {
        !matches!(
            self,
            Phase::Home | Phase::Registration | Phase::SessionSelection
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which round an audio recording or timed slot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round {
    Speaking,
    Qa,
}

impl Round {
    pub fn as_str(self) -> &'static str {
        match self {
            Round::Speaking => "speaking",
            Round::Qa => "qa",
        }
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Position in the protocol: the phase plus, for per-participant phases,
/// the slot index and whose slot it is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseView {
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant: Option<ParticipantId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: PhaseView,
    pub to: PhaseView,
    /// When the new phase began. For timer expiries this is the scheduled
    /// deadline, not the tick that noticed it.
    pub at: Timestamp,
    pub cause: CommandKind,
}

/// Inputs to the session state machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    OpenRegistration,
    ProposeName {
        name: String,
        via: InputSource,
    },
    ConfirmName,
    Back,
    StartSession,
    SetConfig {
        config: SessionConfig,
    },
    CreateTheme {
        titles: BTreeMap<Locale, String>,
    },
    SetThemeActive {
        theme: ThemeId,
        active: bool,
    },
    SetParticipantActive {
        participant: ParticipantId,
        active: bool,
    },
    SelectTheme {
        theme: ThemeId,
    },
    /// `image: None` parks the topic until an image is attached.
    SubmitTopic {
        participant: ParticipantId,
        keyword: String,
        source: InputSource,
        image: Option<ImageRef>,
    },
    AttachImage {
        participant: ParticipantId,
        image: ImageRef,
    },
    /// `participant` is `None` when the ready signal came from a shared
    /// button or voice and cannot be attributed.
    Ready {
        participant: Option<ParticipantId>,
    },
    Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    OpenRegistration,
    ProposeName,
    ConfirmName,
    Back,
    StartSession,
    SetConfig,
    CreateTheme,
    SetThemeActive,
    SetParticipantActive,
    SelectTheme,
    SubmitTopic,
    AttachImage,
    Ready,
    Tick,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::OpenRegistration => "open_registration",
            CommandKind::ProposeName => "propose_name",
            CommandKind::ConfirmName => "confirm_name",
            CommandKind::Back => "back",
            CommandKind::StartSession => "start_session",
            CommandKind::SetConfig => "set_config",
            CommandKind::CreateTheme => "create_theme",
            CommandKind::SetThemeActive => "set_theme_active",
            CommandKind::SetParticipantActive => "set_participant_active",
            CommandKind::SelectTheme => "select_theme",
            CommandKind::SubmitTopic => "submit_topic",
            CommandKind::AttachImage => "attach_image",
            CommandKind::Ready => "ready",
            CommandKind::Tick => "tick",
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::OpenRegistration => CommandKind::OpenRegistration,
            Command::ProposeName { .. } => CommandKind::ProposeName,
            Command::ConfirmName => CommandKind::ConfirmName,
            Command::Back => CommandKind::Back,
            Command::StartSession => CommandKind::StartSession,
            Command::SetConfig { .. } => CommandKind::SetConfig,
            Command::CreateTheme { .. } => CommandKind::CreateTheme,
            Command::SetThemeActive { .. } => CommandKind::SetThemeActive,
            Command::SetParticipantActive { .. } => CommandKind::SetParticipantActive,
            Command::SelectTheme { .. } => CommandKind::SelectTheme,
            Command::SubmitTopic { .. } => CommandKind::SubmitTopic,
            Command::AttachImage { .. } => CommandKind::AttachImage,
            Command::Ready { .. } => CommandKind::Ready,
            Command::Tick => CommandKind::Tick,
        }
    }
}

/// A recognized name waiting for the participant's confirmation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub name: String,
    pub via: InputSource,
}

/// The slot currently on the clock during a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSlot {
    pub round: Round,
    pub slot_index: u32,
    pub participant_id: ParticipantId,
    pub started_at: Timestamp,
    pub duration_s: u32,
}

/// One protocol instance. All mutation goes through [`SessionState::apply`],
/// which either applies a command completely or rejects it and leaves the
/// state untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub config: SessionConfig,
    /// Everyone ever registered, in seat order.
    pub participants: Vec<Participant>,
    pub themes: Vec<Theme>,
    pub theme_id: Option<ThemeId>,
    /// Active participants frozen at theme selection, in seat order.
    pub roster: Vec<ParticipantId>,
    pub topics: BTreeMap<ParticipantId, Topic>,
    pub phase: Phase,
    pub slot_index: u32,
    pub phase_entered_at: Timestamp,
    pub pending_name: Option<Proposal>,
    /// High-water mark of command timestamps. Not part of the protocol
    /// position, so it is skipped when snapshots are serialized.
    #[serde(skip)]
    last_event_at: Timestamp,
}

impl SessionState {
    pub fn new(session_id: SessionId, config: SessionConfig) -> Self {
        SessionState {
            session_id,
            config,
            participants: Vec::new(),
            themes: Vec::new(),
            theme_id: None,
            roster: Vec::new(),
            topics: BTreeMap::new(),
            phase: Phase::Home,
            slot_index: 0,
            phase_entered_at: Timestamp::ZERO,
            pending_name: None,
            last_event_at: Timestamp::ZERO,
        }
    }

    /// A fresh session in `Home` that keeps this one's participants, themes
    /// and configuration.
    pub fn next_session(&self, session_id: SessionId, at: Timestamp) -> Self {
        let mut next = SessionState::new(session_id, self.config.clone());
        next.participants = self.participants.clone();
        next.themes = self.themes.clone();
        next.phase_entered_at = at;
        next.last_event_at = at;
        next
    }

    pub fn last_event_at(&self) -> Timestamp {
        self.last_event_at
    }

    pub fn view(&self) -> PhaseView {
        let slotted = matches!(
            self.phase,
            Phase::TopicCollection | Phase::Speaking | Phase::Qa
        );
        PhaseView {
            phase: self.phase,
            slot: slotted.then_some(self.slot_index),
            participant: if slotted {
                self.roster.get(self.slot_index as usize).copied()
            } else {
                None
            },
        }
    }

    pub fn participant(&self, id: ParticipantId) -> Option<&Participant> {
        self.participants.iter().find(|p| p.id == id)
    }

    pub fn active_participants(&self) -> impl Iterator<Item = &Participant> {
        self.participants.iter().filter(|p| p.active)
    }

    pub fn theme(&self, id: ThemeId) -> Option<&Theme> {
        self.themes.iter().find(|t| t.id == id)
    }

    /// Whose turn it is to give a topic, during topic collection.
    pub fn current_turn(&self) -> Option<ParticipantId> {
        match self.phase {
            Phase::TopicCollection => self.roster.get(self.slot_index as usize).copied(),
            _ => None,
        }
    }

    pub fn active_slot(&self) -> Option<ActiveSlot> {
        let (round, duration_s) = match self.phase {
            Phase::Speaking => (Round::Speaking, self.config.speaking_slot_s),
            Phase::Qa => (Round::Qa, self.config.qa_slot_s),
            _ => return None,
        };
        Some(ActiveSlot {
            round,
            slot_index: self.slot_index,
            participant_id: *self.roster.get(self.slot_index as usize)?,
            started_at: self.phase_entered_at,
            duration_s,
        })
    }

    /// Owner/theme/image triples of a session that reached `Closing`.
    pub fn completed(&self) -> Option<CompletedSession> {
        if self.phase != Phase::Closing {
            return None;
        }
        let theme_id = self.theme_id?;
        let images = self
            .roster
            .iter()
            .filter_map(|p| {
                let topic = self.topics.get(p)?;
                Some((*p, topic.image.clone()?))
            })
            .collect();
        Some(CompletedSession {
            session_id: self.session_id.clone(),
            theme_id,
            images,
        })
    }

    /// Applies one command at time `at`. On error the state is unchanged.
    pub fn apply(
        &mut self,
        command: &Command,
        at: Timestamp,
    ) -> Result<Vec<Transition>, DomainError> {
        if at < self.last_event_at {
            return Err(DomainError::ClockWentBackwards {
                last: self.last_event_at,
                at,
            });
        }
        let mut next = self.clone();
        let transitions = next.step(command, at)?;
        if !matches!(
            command,
            Command::ProposeName { .. } | Command::ConfirmName | Command::Tick
        ) {
            next.pending_name = None;
        }
        next.last_event_at = at;
        *self = next;
        Ok(transitions)
    }

    /// Advances timers to `at`.
    pub fn tick(&mut self, at: Timestamp) -> Result<Vec<Transition>, DomainError> {
        self.apply(&Command::Tick, at)
    }

    fn step(&mut self, command: &Command, at: Timestamp) -> Result<Vec<Transition>, DomainError> {
        use Phase::*;
        let kind = command.kind();
        let mut out = Vec::new();
        match (self.phase, command) {
            (_, Command::Tick) => self.run_timers(at, &mut out),

            (Home, Command::OpenRegistration) => self.enter(Registration, 0, at, kind, &mut out),
            (Registration, Command::ProposeName { name, via }) => {
                let name = normalize_name(name);
                if name.is_empty() {
                    return Err(DomainError::EmptyName);
                }
                self.check_unique_name(&name, None)?;
                self.pending_name = Some(Proposal { name, via: *via });
            }
            (Registration, Command::ConfirmName) => {
                let proposal = self
                    .pending_name
                    .take()
                    .ok_or(DomainError::NothingToConfirm)?;
                self.check_unique_name(&proposal.name, None)?;
                let n = self.participants.len() as u32;
                self.participants.push(Participant {
                    id: ParticipantId(n + 1),
                    display_name: proposal.name,
                    active: true,
                    registered_via: proposal.via,
                    seat_order: n,
                });
            }
            (Registration | SessionSelection, Command::Back) => {
                self.enter(Home, 0, at, kind, &mut out)
            }
            (Home, Command::StartSession) => self.enter(SessionSelection, 0, at, kind, &mut out),

            (Home | SessionSelection, Command::SetConfig { config }) => {
                config.validate()?;
                self.config = config.clone();
            }
            (phase, Command::SetConfig { .. }) if phase.in_progress() => {
                return Err(DomainError::SessionInProgress)
            }

            (Home | Registration | SessionSelection, Command::CreateTheme { titles }) => {
                let mut clean = BTreeMap::new();
                for locale in Locale::ALL {
                    let title = titles
                        .get(&locale)
                        .map(|t| normalize_name(t))
                        .unwrap_or_default();
                    if title.is_empty() {
                        return Err(DomainError::MissingThemeTitle { locale });
                    }
                    clean.insert(locale, title);
                }
                let id = ThemeId(self.themes.len() as u32 + 1);
                self.themes.push(Theme {
                    id,
                    titles: clean,
                    active: true,
                });
            }
            (Home | Registration | SessionSelection, Command::SetThemeActive { theme, active }) => {
                let theme = self
                    .themes
                    .iter_mut()
                    .find(|t| t.id == *theme)
                    .ok_or_else(|| DomainError::UnknownTheme {
                        utterance: theme.to_string(),
                    })?;
                theme.active = *active;
            }
            (
                Home | Registration | SessionSelection,
                Command::SetParticipantActive {
                    participant,
                    active,
                },
            ) => {
                let p = self
                    .participant(*participant)
                    .ok_or(DomainError::UnknownParticipant {
                        participant: *participant,
                    })?;
                if *active && !p.active {
                    let name = p.display_name.clone();
                    self.check_unique_name(&name, Some(*participant))?;
                }
                self.participant_mut(*participant).active = *active;
            }
            (
                TopicCollection,
                Command::SetParticipantActive {
                    participant,
                    active: false,
                },
            ) => self.withdraw(*participant, at, &mut out)?,

            (SessionSelection, Command::SelectTheme { theme }) => {
                let t = self
                    .theme(*theme)
                    .ok_or_else(|| DomainError::UnknownTheme {
                        utterance: theme.to_string(),
                    })?;
                if !t.active {
                    return Err(DomainError::InactiveTheme { theme: *theme });
                }
                let mut roster: Vec<&Participant> = self.active_participants().collect();
                if roster.is_empty() {
                    return Err(DomainError::NoActiveParticipants);
                }
                roster.sort_by_key(|p| p.seat_order);
                self.roster = roster.into_iter().map(|p| p.id).collect();
                self.theme_id = Some(*theme);
                self.topics.clear();
                self.enter(TopicCollection, 0, at, kind, &mut out);
            }
            (
                TopicCollection,
                Command::SubmitTopic {
                    participant,
                    keyword,
                    source,
                    image,
                },
            ) => {
                self.check_turn(*participant)?;
                let keyword = normalize_name(keyword);
                if keyword.is_empty() {
                    return Err(DomainError::EmptyKeyword);
                }
                self.topics.insert(
                    *participant,
                    Topic {
                        participant_id: *participant,
                        keyword,
                        image: image.clone(),
                        source: *source,
                    },
                );
                if image.is_some() {
                    self.advance_turn(at, kind, &mut out);
                }
            }
            (TopicCollection, Command::AttachImage { participant, image }) => {
                self.check_turn(*participant)?;
                let topic = self
                    .topics
                    .get_mut(participant)
                    .filter(|t| t.image.is_none())
                    .ok_or(DomainError::NoPendingTopic {
                        participant: *participant,
                    })?;
                topic.image = Some(image.clone());
                self.advance_turn(at, kind, &mut out);
            }
            (Preparation | QaPreparation, Command::Ready { participant }) => {
                if let Some(p) = participant.filter(|p| !self.roster.contains(p)) {
                    return Err(DomainError::UnknownParticipant { participant: p });
                }
                let next = if self.phase == Preparation {
                    Speaking
                } else {
                    Qa
                };
                self.enter(next, 0, at, kind, &mut out);
            }

            (phase, _) => {
                return Err(DomainError::WrongPhase {
                    phase,
                    command: kind,
                })
            }
        }
        Ok(out)
    }

    fn enter(
        &mut self,
        phase: Phase,
        slot: u32,
        at: Timestamp,
        cause: CommandKind,
        out: &mut Vec<Transition>,
    ) {
        let from = self.view();
        self.phase = phase;
        self.slot_index = slot;
        self.phase_entered_at = at;
        out.push(Transition {
            from,
            to: self.view(),
            at,
            cause,
        });
    }

    fn run_timers(&mut self, at: Timestamp, out: &mut Vec<Transition>) {
        loop {
            let n = self.roster.len() as u32;
            let (limit, next) = match self.phase {
                Phase::Preparation => match self.config.prep_before_speaking_s {
                    Some(cap) => (cap, (Phase::Speaking, 0)),
                    None => break,
                },
                Phase::Speaking => {
                    let next = if self.slot_index + 1 < n {
                        (Phase::Speaking, self.slot_index + 1)
                    } else {
                        (Phase::QaPreparation, 0)
                    };
                    (self.config.speaking_slot_s, next)
                }
                Phase::QaPreparation => match self.config.qa_prep_s() {
                    Some(cap) => (cap, (Phase::Qa, 0)),
                    None => break,
                },
                Phase::Qa => {
                    let next = if self.slot_index + 1 < n {
                        (Phase::Qa, self.slot_index + 1)
                    } else {
                        (Phase::Closing, 0)
                    };
                    (self.config.qa_slot_s, next)
                }
                _ => break,
            };
            let deadline = self.phase_entered_at.plus_secs(limit);
            if at < deadline {
                break;
            }
            self.enter(next.0, next.1, deadline, CommandKind::Tick, out);
        }
    }

    fn begin_rounds(&mut self, at: Timestamp, cause: CommandKind, out: &mut Vec<Transition>) {
        let phase = if self.config.prep_before_speaking_s.is_some() {
            Phase::Preparation
        } else {
            Phase::Speaking
        };
        self.enter(phase, 0, at, cause, out);
    }

    fn advance_turn(&mut self, at: Timestamp, cause: CommandKind, out: &mut Vec<Transition>) {
        let next = self.slot_index + 1;
        if next as usize >= self.roster.len() {
            self.begin_rounds(at, cause, out);
        } else {
            self.enter(Phase::TopicCollection, next, at, cause, out);
        }
    }

    /// Removes an absent participant from the roster during topic collection.
    fn withdraw(
        &mut self,
        participant: ParticipantId,
        at: Timestamp,
        out: &mut Vec<Transition>,
    ) -> Result<(), DomainError> {
        let index = self
            .roster
            .iter()
            .position(|p| *p == participant)
            .ok_or(DomainError::UnknownParticipant { participant })?;
        if self.roster.len() == 1 {
            return Err(DomainError::NoActiveParticipants);
        }
        let from = self.view();
        self.roster.remove(index);
        self.topics.remove(&participant);
        self.participant_mut(participant).active = false;
        let current = self.slot_index as usize;
        if index < current {
            // Same speaker, one seat earlier.
            self.slot_index -= 1;
        } else if index == current {
            if current >= self.roster.len() {
                self.phase = if self.config.prep_before_speaking_s.is_some() {
                    Phase::Preparation
                } else {
                    Phase::Speaking
                };
                self.slot_index = 0;
            }
            self.phase_entered_at = at;
        } else {
            return Ok(());
        }
        out.push(Transition {
            from,
            to: self.view(),
            at,
            cause: CommandKind::SetParticipantActive,
        });
        Ok(())
    }

    fn check_turn(&self, participant: ParticipantId) -> Result<(), DomainError> {
        let expected = self.current_turn().ok_or(DomainError::WrongPhase {
            phase: self.phase,
            command: CommandKind::SubmitTopic,
        })?;
        if expected == participant {
            Ok(())
        } else if self.participant(participant).is_none() {
            Err(DomainError::UnknownParticipant { participant })
        } else {
            Err(DomainError::OutOfTurn {
                expected,
                got: participant,
            })
        }
    }

    fn check_unique_name(
        &self,
        name: &str,
        except: Option<ParticipantId>,
    ) -> Result<(), DomainError> {
        let folded = name.to_lowercase();
        let clash = self
            .active_participants()
            .filter(|p| Some(p.id) != except)
            .any(|p| p.display_name.to_lowercase() == folded);
        if clash {
            Err(DomainError::DuplicateActiveName {
                name: name.to_string(),
            })
        } else {
            Ok(())
        }
    }

    fn participant_mut(&mut self, id: ParticipantId) -> &mut Participant {
        self.participants
            .iter_mut()
            .find(|p| p.id == id)
            .expect("participant checked by caller")
    }
}

/// Trims and collapses internal whitespace.
fn normalize_name(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}
