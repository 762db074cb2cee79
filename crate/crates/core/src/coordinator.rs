//! The single writer. Every mutation of a session goes through a
//! [`Coordinator`], which ticks timers up to the current time, applies the
//! command, appends the results to the session's event log and fans the new
//! entries out to subscribers.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::audio::{AudioError, AudioStore, BeginRecording, RecordingHandle, RecordingMeta};
use crate::clock::{Clock, Timestamp};
use crate::domain::{
    build_memory_task, Command, CompletedSession, DomainError, Guess, InputSource, MemoryTask,
    MemoryTaskError, ParticipantId, Phase, Round, SessionConfig, SessionId, SessionState,
    Transition,
};
use crate::eventlog::{read_log, replay, EntryBody, EventLog, LogEntry, LogError};
use crate::grammar::{
    extract_keyword, match_command, normalize, GrammarError, KeywordContext, LocalePack,
    LocalePacks, SpokenCommand,
};
use crate::images::{ImageError, ImageService, ManualImage, ProviderKind};
use crate::metrics::{AttemptOrigin, AttemptRecord, Feature, Outcome, SessionReport};

const EVENT_BUFFER: usize = 1024;
const LOG_FILE: &str = "events.jsonl";

/// A log entry tagged with the session it belongs to, as pushed to
/// subscribers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: SessionId,
    #[serde(flatten)]
    pub entry: LogEntry,
}

/// Result of a mutation: the state afterwards and the seq of the last log
/// entry it produced.
#[derive(Debug, Clone, Serialize)]
pub struct Applied {
    pub seq: u64,
    pub transitions: Vec<Transition>,
    pub state: SessionState,
}

#[derive(Debug, Clone, Serialize)]
pub struct Heard {
    pub heard: SpokenCommand,
    #[serde(flatten)]
    pub applied: Applied,
}

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Memory(#[from] MemoryTaskError),
    #[error("image search failed and the topic is waiting for a manual image: {source}")]
    ImageUnavailable { source: ImageError, seq: u64 },
    #[error("`{utterance}` does not match anything on this screen")]
    Unrecognized { utterance: String },
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("seq {requested} is ahead of the log (next is {next})")]
    SeqAhead { requested: u64, next: u64 },
    #[error("no memory task has been built")]
    NoMemoryTask,
    #[error("the current session has not reached closing")]
    SessionNotFinished,
}

pub struct CoordinatorOptions {
    pub data_dir: PathBuf,
    /// Configuration for the first session when the data directory is empty.
    pub config: SessionConfig,
    pub packs: LocalePacks,
}

struct Inner {
    state: SessionState,
    logs: BTreeMap<SessionId, EventLog>,
    archived: Vec<CompletedSession>,
    counter: u32,
    confirm_tokens: HashMap<String, u64>,
    memory: Option<MemoryTask>,
}

pub struct Coordinator {
    inner: Mutex<Inner>,
    audio: Mutex<AudioStore>,
    images: ImageService,
    packs: LocalePacks,
    clock: Arc<dyn Clock>,
    data_dir: PathBuf,
    events: broadcast::Sender<SessionEvent>,
}

impl Coordinator {
    /// Opens the data directory, replaying any existing session logs. The
    /// newest session becomes current; earlier ones that reached closing
    /// feed the memory task.
    pub fn open(
        opts: CoordinatorOptions,
        images: ImageService,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, CoordinatorError> {
        let audio = AudioStore::open(&opts.data_dir)?;
        let mut logs = BTreeMap::new();
        let mut archived = Vec::new();
        let mut counter = 0;
        let mut current = None;
        for (sid, path) in existing_logs(&opts.data_dir).map_err(LogError::from)? {
            let state = replay(&read_log(&path)?)?;
            if let Some(n) = sid
                .as_str()
                .strip_prefix("session-")
                .and_then(|n| n.parse().ok())
            {
                counter = counter.max(n);
            }
            if let Some(prev) = current.replace(state) {
                archived.extend(SessionState::completed(&prev));
            }
            logs.insert(sid.clone(), EventLog::reopen(sid, path)?);
        }
        let state = match current {
            Some(state) => state,
            None => {
                opts.config.validate()?;
                counter += 1;
                let sid = SessionId::numbered(counter);
                let mut state = SessionState::new(sid.clone(), opts.config);
                let now = clock.now();
                state.tick(now)?;
                let log = start_log(&opts.data_dir, &state, now)?;
                logs.insert(sid, log);
                state
            }
        };
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        Ok(Coordinator {
            inner: Mutex::new(Inner {
                state,
                logs,
                archived,
                counter,
                confirm_tokens: HashMap::new(),
                memory: None,
            }),
            audio: Mutex::new(audio),
            images,
            packs: opts.packs,
            clock,
            data_dir: opts.data_dir,
            events,
        })
    }

    /// Largest audio chunk accepted in one append.
    pub fn with_max_chunk_bytes(self, limit: usize) -> Self {
        let audio = self.audio.into_inner().expect("audio lock");
        Coordinator {
            audio: Mutex::new(audio.with_max_chunk_bytes(limit)),
            ..self
        }
    }

    pub fn max_chunk_bytes(&self) -> usize {
        self.audio.lock().expect("audio lock").max_chunk_bytes()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn images(&self) -> &ImageService {
        &self.images
    }

    pub fn packs(&self) -> &LocalePacks {
        &self.packs
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    /// Pack for the current session's language.
    pub fn pack(&self) -> LocalePack {
        self.packs.get(self.lock().state.config.locale).clone()
    }

    pub fn snapshot(&self) -> SessionState {
        self.lock().state.clone()
    }

    pub fn current_session(&self) -> SessionId {
        self.lock().state.session_id.clone()
    }

    pub fn sessions(&self) -> Vec<SessionId> {
        self.lock().logs.keys().cloned().collect()
    }

    pub fn entries(&self, session: &SessionId) -> Result<Vec<LogEntry>, CoordinatorError> {
        let inner = self.lock();
        let log = inner
            .logs
            .get(session)
            .ok_or_else(|| CoordinatorError::UnknownSession(session.clone()))?;
        Ok(log.entries().to_vec())
    }

    /// Entries from `from_seq` on, plus a receiver for everything after them.
    /// Both are taken under the writer lock, so together they have no gaps
    /// and no duplicates.
    pub fn events_from(
        &self,
        session: &SessionId,
        from_seq: u64,
    ) -> Result<(Vec<SessionEvent>, broadcast::Receiver<SessionEvent>), CoordinatorError> {
        let inner = self.lock();
        let log = inner
            .logs
            .get(session)
            .ok_or_else(|| CoordinatorError::UnknownSession(session.clone()))?;
        if from_seq > log.next_seq() {
            return Err(CoordinatorError::SeqAhead {
                requested: from_seq,
                next: log.next_seq(),
            });
        }
        let rx = self.events.subscribe();
        let history = log
            .since(from_seq)
            .iter()
            .map(|entry| SessionEvent {
                session_id: session.clone(),
                entry: entry.clone(),
            })
            .collect();
        Ok((history, rx))
    }

    /// Fires any timers that are due. Logs nothing when nothing was due.
    pub fn tick(&self) -> Result<Applied, CoordinatorError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        let transitions = self.advance(&mut inner, now)?;
        Ok(Applied {
            seq: inner.last_seq(),
            transitions,
            state: inner.state.clone(),
        })
    }

    /// Applies one state machine command at the current time.
    pub fn execute(&self, command: Command) -> Result<Applied, CoordinatorError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        self.run(&mut inner, command, now)
    }

    /// Confirms the pending name. Retrying with a token that already
    /// succeeded returns the original result instead of registering twice.
    pub fn confirm_name(&self, token: Option<&str>) -> Result<Applied, CoordinatorError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        if let Some(seq) = token.and_then(|t| inner.confirm_tokens.get(t)) {
            return Ok(Applied {
                seq: *seq,
                transitions: Vec::new(),
                state: inner.state.clone(),
            });
        }
        let applied = self.run(&mut inner, Command::ConfirmName, now)?;
        if let Some(token) = token {
            inner.confirm_tokens.insert(token.to_string(), applied.seq);
        }
        Ok(applied)
    }

    /// Takes `participant`'s topic, looks up its top image and advances the
    /// turn. If the provider fails the topic is kept without an image and
    /// the failure is returned; a manual image completes it.
    pub async fn submit_topic(
        &self,
        participant: ParticipantId,
        keyword: &str,
        source: InputSource,
    ) -> Result<Applied, CoordinatorError> {
        let parked = Command::SubmitTopic {
            participant,
            keyword: keyword.to_string(),
            source,
            image: None,
        };
        let locale = {
            let now = self.clock.now();
            let mut inner = self.lock();
            self.advance(&mut inner, now)?;
            inner.state.clone().apply(&parked, now)?;
            inner.state.config.locale
        };
        let keyword = normalize(keyword);
        let found = self
            .images
            .search_top_image(&keyword, locale, self.clock.now())
            .await;
        let now = self.clock.now();
        let mut inner = self.lock();
        match found {
            Ok(image) => self.run(
                &mut inner,
                Command::SubmitTopic {
                    participant,
                    keyword,
                    source,
                    image: Some(image),
                },
                now,
            ),
            Err(source)
                if source.is_provider_failure()
                    || matches!(source, ImageError::NoResults { .. }) =>
            {
                self.run(&mut inner, parked, now)?;
                let seq = self.attempt(
                    &mut inner,
                    Feature::ImageSearch,
                    participant,
                    Outcome::Failure,
                    now,
                )?;
                Err(CoordinatorError::ImageUnavailable { source, seq })
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Completes `participant`'s waiting topic with a facilitator-supplied
    /// image.
    pub async fn attach_manual_image(
        &self,
        participant: ParticipantId,
        payload: ManualImage,
    ) -> Result<Applied, CoordinatorError> {
        let keyword = {
            let inner = self.lock();
            match inner.state.topics.get(&participant) {
                Some(t) if t.image.is_none() && inner.state.current_turn() == Some(participant) => {
                    t.keyword.clone()
                }
                _ => return Err(DomainError::NoPendingTopic { participant }.into()),
            }
        };
        let image = self
            .images
            .attach_manual_image(&keyword, payload, self.clock.now())
            .await?;
        let now = self.clock.now();
        let mut inner = self.lock();
        self.run(&mut inner, Command::AttachImage { participant, image }, now)
    }

    /// Interprets recognized speech (or typed text) for the current screen
    /// and acts on it.
    pub async fn utterance(
        &self,
        text: &str,
        via: InputSource,
        participant: Option<ParticipantId>,
    ) -> Result<Heard, CoordinatorError> {
        if normalize(text).is_empty() {
            return Err(GrammarError::EmptyUtterance.into());
        }
        let (heard, command, turn) = {
            let inner = self.lock();
            let state = &inner.state;
            let pack = self.packs.get(state.config.locale);
            let heard = match_command(text, pack, state.phase, &state.themes);
            let command = match &heard {
                SpokenCommand::Register => Some(Command::OpenRegistration),
                SpokenCommand::StartSession => Some(Command::StartSession),
                SpokenCommand::Confirm => Some(Command::ConfirmName),
                SpokenCommand::Back => Some(Command::Back),
                SpokenCommand::Ready => Some(Command::Ready { participant }),
                SpokenCommand::SelectTheme(theme) => Some(Command::SelectTheme { theme: *theme }),
                SpokenCommand::FreeText(raw) if state.phase == Phase::Registration => {
                    Some(Command::ProposeName {
                        name: extract_keyword(raw, pack, KeywordContext::Name)?,
                        via,
                    })
                }
                SpokenCommand::FreeText(_) => None,
                SpokenCommand::NoMatch if state.phase == Phase::SessionSelection => {
                    let folded = normalize(text).to_lowercase();
                    let inactive = state.themes.iter().find(|t| {
                        !t.active && normalize(t.title(pack.locale)).to_lowercase() == folded
                    });
                    return Err(match inactive {
                        Some(t) => DomainError::InactiveTheme { theme: t.id },
                        None => DomainError::UnknownTheme {
                            utterance: normalize(text),
                        },
                    }
                    .into());
                }
                SpokenCommand::NoMatch => {
                    return Err(CoordinatorError::Unrecognized {
                        utterance: normalize(text),
                    })
                }
            };
            (heard, command, state.current_turn())
        };
        let applied = match (command, &heard) {
            (Some(command), _) => self.execute(command)?,
            (None, SpokenCommand::FreeText(raw)) => {
                let pack = self.pack();
                let keyword = extract_keyword(raw, &pack, KeywordContext::Topic)?;
                let who = participant
                    .or(turn)
                    .ok_or(DomainError::NoActiveParticipants)?;
                self.submit_topic(who, &keyword, via).await?
            }
            (None, _) => unreachable!("only free text defers"),
        };
        Ok(Heard { heard, applied })
    }

    /// Records an outcome the system cannot observe itself, such as whether
    /// a recognized name was the one spoken.
    pub fn record_attempt(
        &self,
        session: &SessionId,
        feature: Feature,
        participant: ParticipantId,
        outcome: Outcome,
    ) -> Result<u64, CoordinatorError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        if !inner.logs.contains_key(session) {
            return Err(CoordinatorError::UnknownSession(session.clone()));
        }
        if inner.state.participant(participant).is_none() {
            return Err(DomainError::UnknownParticipant { participant }.into());
        }
        let record = AttemptRecord {
            session_id: session.clone(),
            feature,
            participant_id: participant,
            outcome,
            at: now,
            origin: AttemptOrigin::Facilitator,
        };
        Ok(self.append(&mut inner, session, now, EntryBody::Attempt(record))?)
    }

    /// Opens a recording for the slot on the clock in the current session.
    pub fn begin_recording(
        &self,
        round: Round,
        slot_index: u32,
        participant: ParticipantId,
        media_type: &str,
    ) -> Result<RecordingHandle, CoordinatorError> {
        let now = self.clock.now();
        let (session_id, active) = {
            let mut inner = self.lock();
            self.advance(&mut inner, now)?;
            (inner.state.session_id.clone(), inner.state.active_slot())
        };
        let mut audio = self.audio.lock().expect("audio lock");
        audio.ensure_session(&session_id)?;
        let req = BeginRecording {
            session_id,
            round,
            slot_index,
            participant_id: participant,
            media_type: media_type.to_string(),
        };
        Ok(audio.begin_recording(req, active, now)?)
    }

    pub fn append_chunk(
        &self,
        handle: RecordingHandle,
        bytes: &[u8],
    ) -> Result<u64, CoordinatorError> {
        Ok(self
            .audio
            .lock()
            .expect("audio lock")
            .append_chunk(handle, bytes)?)
    }

    /// Makes the recording visible, logs it and counts a successful
    /// recording attempt for its round.
    pub fn finalize_recording(
        &self,
        handle: RecordingHandle,
    ) -> Result<RecordingMeta, CoordinatorError> {
        let now = self.clock.now();
        let meta = self
            .audio
            .lock()
            .expect("audio lock")
            .finalize_recording(handle, now)?;
        let mut inner = self.lock();
        let session = meta.session_id.clone();
        if !inner.logs.contains_key(&session) {
            return Err(CoordinatorError::UnknownSession(session));
        }
        self.append(
            &mut inner,
            &session,
            now,
            EntryBody::Recording(meta.clone()),
        )?;
        let feature = match meta.round {
            Round::Speaking => Feature::AudioSpeaking,
            Round::Qa => Feature::AudioQa,
        };
        let record = AttemptRecord {
            session_id: session.clone(),
            feature,
            participant_id: meta.participant_id,
            outcome: Outcome::Success,
            at: now,
            origin: AttemptOrigin::System,
        };
        self.append(&mut inner, &session, now, EntryBody::Attempt(record))?;
        Ok(meta)
    }

    pub fn recordings(&self, session: &SessionId) -> Result<Vec<RecordingMeta>, CoordinatorError> {
        if !self.lock().logs.contains_key(session) {
            return Err(CoordinatorError::UnknownSession(session.clone()));
        }
        let audio = self.audio.lock().expect("audio lock");
        match audio.list_recordings(session) {
            Err(AudioError::UnknownSession(_)) => Ok(Vec::new()),
            other => Ok(other?),
        }
    }

    pub fn recording_path(&self, meta: &RecordingMeta) -> PathBuf {
        self.audio.lock().expect("audio lock").resolve(meta)
    }

    /// Leaves a session that reached closing and opens the next one with
    /// the same participants, themes and configuration.
    pub fn start_next_session(&self) -> Result<Applied, CoordinatorError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        self.advance(&mut inner, now)?;
        let Some(done) = inner.state.completed() else {
            return Err(CoordinatorError::SessionNotFinished);
        };
        let sid = SessionId::numbered(inner.counter + 1);
        let next = inner.state.next_session(sid.clone(), now);
        let log = start_log(&self.data_dir, &next, now)?;
        let entry = log.entries()[0].clone();
        inner.counter += 1;
        inner.archived.push(done);
        inner.logs.insert(sid.clone(), log);
        inner.state = next;
        let _ = self.events.send(SessionEvent {
            session_id: sid,
            entry,
        });
        Ok(Applied {
            seq: 0,
            transitions: Vec::new(),
            state: inner.state.clone(),
        })
    }

    /// Finished sessions that can feed the memory task.
    pub fn completed_sessions(&self) -> Vec<CompletedSession> {
        let inner = self.lock();
        let mut out = inner.archived.clone();
        out.extend(inner.state.completed());
        out
    }

    pub fn build_memory_task(&self, seed: u64) -> Result<MemoryTask, CoordinatorError> {
        let sessions = self.completed_sessions();
        let task = build_memory_task(&sessions, seed)?;
        self.lock().memory = Some(task.clone());
        Ok(task)
    }

    pub fn memory_task(&self) -> Option<MemoryTask> {
        self.lock().memory.clone()
    }

    pub fn record_guess(
        &self,
        participant: ParticipantId,
        index: usize,
        guess: Guess,
    ) -> Result<(), CoordinatorError> {
        let mut inner = self.lock();
        if inner.state.participant(participant).is_none() {
            return Err(DomainError::UnknownParticipant { participant }.into());
        }
        let task = inner
            .memory
            .as_mut()
            .ok_or(CoordinatorError::NoMemoryTask)?;
        Ok(task.record_guess(participant, index, guess)?)
    }

    pub fn memory_score(
        &self,
        participant: ParticipantId,
    ) -> Result<num_rational::Ratio<u64>, CoordinatorError> {
        let inner = self.lock();
        let task = inner
            .memory
            .as_ref()
            .ok_or(CoordinatorError::NoMemoryTask)?;
        Ok(task.score(participant)?)
    }

    pub fn session_report(&self, session: &SessionId) -> Result<SessionReport, CoordinatorError> {
        let inner = self.lock();
        let log = inner
            .logs
            .get(session)
            .ok_or_else(|| CoordinatorError::UnknownSession(session.clone()))?;
        Ok(log.report())
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("coordinator lock")
    }

    fn advance(
        &self,
        inner: &mut Inner,
        now: Timestamp,
    ) -> Result<Vec<Transition>, CoordinatorError> {
        let mut next = inner.state.clone();
        let transitions = next.tick(now)?;
        if transitions.is_empty() {
            inner.state = next;
            return Ok(transitions);
        }
        let sid = inner.state.session_id.clone();
        self.append(inner, &sid, now, EntryBody::Command(Command::Tick))?;
        for t in &transitions {
            self.append(inner, &sid, t.at, EntryBody::Transition(t.clone()))?;
        }
        inner.state = next;
        Ok(transitions)
    }

    fn run(
        &self,
        inner: &mut Inner,
        command: Command,
        now: Timestamp,
    ) -> Result<Applied, CoordinatorError> {
        let mut fired = self.advance(inner, now)?;
        if command == Command::Tick {
            return Ok(Applied {
                seq: inner.last_seq(),
                transitions: fired,
                state: inner.state.clone(),
            });
        }
        let mut next = inner.state.clone();
        let transitions = next.apply(&command, now)?;
        let sid = inner.state.session_id.clone();
        let mut seq = self.append(inner, &sid, now, EntryBody::Command(command.clone()))?;
        for t in &transitions {
            seq = self.append(inner, &sid, t.at, EntryBody::Transition(t.clone()))?;
        }
        inner.state = next;
        let auto = match &command {
            Command::ConfirmName => inner
                .state
                .participants
                .last()
                .map(|p| (Feature::Registration, p.id)),
            Command::SubmitTopic {
                participant,
                image: Some(image),
                ..
            } if image.provider != ProviderKind::Manual => {
                Some((Feature::ImageSearch, *participant))
            }
            _ => None,
        };
        if let Some((feature, participant)) = auto {
            seq = self.attempt(inner, feature, participant, Outcome::Success, now)?;
        }
        fired.extend(transitions);
        Ok(Applied {
            seq,
            transitions: fired,
            state: inner.state.clone(),
        })
    }

    fn attempt(
        &self,
        inner: &mut Inner,
        feature: Feature,
        participant: ParticipantId,
        outcome: Outcome,
        now: Timestamp,
    ) -> Result<u64, LogError> {
        let sid = inner.state.session_id.clone();
        let record = AttemptRecord {
            session_id: sid.clone(),
            feature,
            participant_id: participant,
            outcome,
            at: now,
            origin: AttemptOrigin::System,
        };
        self.append(inner, &sid, now, EntryBody::Attempt(record))
    }

    fn append(
        &self,
        inner: &mut Inner,
        session: &SessionId,
        at: Timestamp,
        body: EntryBody,
    ) -> Result<u64, LogError> {
        let log = inner.logs.get_mut(session).expect("session has a log");
        let entry = log.append(at, body)?.clone();
        let seq = entry.seq;
        let _ = self.events.send(SessionEvent {
            session_id: session.clone(),
            entry,
        });
        Ok(seq)
    }
}

impl Inner {
    fn last_seq(&self) -> u64 {
        self.logs
            .get(&self.state.session_id)
            .map_or(0, |l| l.next_seq().saturating_sub(1))
    }
}

pub fn log_path(data_dir: &Path, session: &SessionId) -> PathBuf {
    data_dir
        .join("sessions")
        .join(session.as_str())
        .join(LOG_FILE)
}

fn start_log(data_dir: &Path, state: &SessionState, at: Timestamp) -> Result<EventLog, LogError> {
    let mut log = EventLog::create(
        state.session_id.clone(),
        log_path(data_dir, &state.session_id),
    )?;
    log.append(at, EntryBody::Started(state.clone()))?;
    Ok(log)
}

fn existing_logs(data_dir: &Path) -> Result<Vec<(SessionId, PathBuf)>, std::io::Error> {
    let sessions = data_dir.join("sessions");
    let mut out = Vec::new();
    if !sessions.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(&sessions)? {
        let dir = entry?.path();
        let path = dir.join(LOG_FILE);
        if let (Some(name), true) = (dir.file_name().and_then(|n| n.to_str()), path.is_file()) {
            out.push((SessionId(name.to_string()), path));
        }
    }
    out.sort();
    Ok(out)
}
