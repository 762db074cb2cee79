//! Round audio on the file system.
//!
//! Layout under the data directory:
//!
//! ```text
//! sessions/<session_id>/audio/<round>-<slot>-<participant>.<ext>       finalized audio
//! sessions/<session_id>/audio/<round>-<slot>-<participant>.meta        sidecar metadata
//! sessions/<session_id>/audio/<round>-<slot>-<participant>.<ext>.part  upload in progress
//! ```
//!
//! Uploaded bytes are stored exactly as received. A recording only becomes
//! visible once both its sidecar and its audio file have been renamed into
//! place; leftovers from an interrupted upload are removed by
//! [`AudioStore::open`].

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::domain::{ActiveSlot, ParticipantId, Round, SessionId};

/// Allowed overrun past the slot length before a warning is logged.
pub const DURATION_GRACE_S: u64 = 5;
pub const DEFAULT_MAX_CHUNK_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub session_id: SessionId,
    pub round: Round,
    pub slot_index: u32,
    pub participant_id: ParticipantId,
    pub started_at: Timestamp,
    pub ended_at: Timestamp,
    pub media_type: String,
    /// Relative to the data directory.
    pub path: PathBuf,
    pub byte_len: u64,
    pub finalized: bool,
}

impl RecordingMeta {
    /// Sidecar document text.
    pub fn to_sidecar(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("meta serializes");
        text.push('\n');
        text
    }

    pub fn from_sidecar(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordingHandle(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeginRecording {
    pub session_id: SessionId,
    pub round: Round,
    pub slot_index: u32,
    pub participant_id: ParticipantId,
    pub media_type: String,
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("{round} slot {slot_index} is not the active slot")]
    SlotNotActive { round: Round, slot_index: u32 },
    #[error("{round} slot {slot_index} already has a recording")]
    DuplicateRecording { round: Round, slot_index: u32 },
    #[error("unknown recording handle {0:?}")]
    UnknownHandle(RecordingHandle),
    #[error("recording {0:?} is already finalized")]
    RecordingClosed(RecordingHandle),
    #[error("chunk is empty")]
    ZeroLengthChunk,
    #[error("chunk of {len} bytes exceeds the {limit} byte limit")]
    ChunkTooLarge { len: usize, limit: usize },
    #[error("nothing was recorded")]
    EmptyRecording,
    #[error("recording ends at {ended_at} before it started at {started_at}")]
    ClockSkew {
        started_at: Timestamp,
        ended_at: Timestamp,
    },
    #[error("unsupported media type `{0}`")]
    UnsupportedMediaType(String),
    #[error("audio storage: {0}")]
    Io(#[from] std::io::Error),
}

struct OpenRecording {
    meta: RecordingMeta,
    file: File,
    part_path: PathBuf,
    final_path: PathBuf,
    meta_path: PathBuf,
    slot_duration_s: u32,
}

pub struct AudioStore {
    data_dir: PathBuf,
    open: HashMap<RecordingHandle, OpenRecording>,
    closed: HashSet<RecordingHandle>,
    next_handle: u64,
    max_chunk_bytes: usize,
}

impl AudioStore {
    /// Opens the store and discards anything an interrupted upload left
    /// behind.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, AudioError> {
        let data_dir = data_dir.into();
        let sessions = data_dir.join("sessions");
        fs::create_dir_all(&sessions)?;
        for session in fs::read_dir(&sessions)? {
            let audio = session?.path().join("audio");
            if audio.is_dir() {
                clean_audio_dir(&data_dir, &audio)?;
            }
        }
        Ok(AudioStore {
            data_dir,
            open: HashMap::new(),
            closed: HashSet::new(),
            next_handle: 1,
            max_chunk_bytes: DEFAULT_MAX_CHUNK_BYTES,
        })
    }

    pub fn with_max_chunk_bytes(mut self, limit: usize) -> Self {
        self.max_chunk_bytes = limit;
        self
    }

    pub fn max_chunk_bytes(&self) -> usize {
        self.max_chunk_bytes
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn audio_dir(&self, session: &SessionId) -> PathBuf {
        self.data_dir
            .join("sessions")
            .join(session.as_str())
            .join("audio")
    }

    /// Makes `session` known to the store.
    pub fn ensure_session(&self, session: &SessionId) -> Result<(), AudioError> {
        fs::create_dir_all(self.audio_dir(session))?;
        Ok(())
    }

    /// Opens a recording for the slot that is currently on the clock.
    pub fn begin_recording(
        &mut self,
        req: BeginRecording,
        active: Option<ActiveSlot>,
        at: Timestamp,
    ) -> Result<RecordingHandle, AudioError> {
        let dir = self.audio_dir(&req.session_id);
        if !dir.is_dir() {
            return Err(AudioError::UnknownSession(req.session_id));
        }
        let slot = active.filter(|a| {
            a.round == req.round
                && a.slot_index == req.slot_index
                && a.participant_id == req.participant_id
        });
        let Some(slot) = slot else {
            return Err(AudioError::SlotNotActive {
                round: req.round,
                slot_index: req.slot_index,
            });
        };
        let ext = extension_for(&req.media_type)
            .ok_or_else(|| AudioError::UnsupportedMediaType(req.media_type.clone()))?;
        let stem = format!("{}-{}-{}", req.round, req.slot_index, req.participant_id);
        let final_path = dir.join(format!("{stem}.{ext}"));
        let meta_path = dir.join(format!("{stem}.meta"));
        let part_path = dir.join(format!("{stem}.{ext}.part"));
        let duplicate = self.open.values().any(|o| {
            o.meta.session_id == req.session_id
                && o.meta.round == req.round
                && o.meta.slot_index == req.slot_index
        }) || self.finalized_exists(&dir, req.round, req.slot_index)?;
        if duplicate {
            return Err(AudioError::DuplicateRecording {
                round: req.round,
                slot_index: req.slot_index,
            });
        }
        let file = File::create(&part_path)?;
        let rel = final_path
            .strip_prefix(&self.data_dir)
            .unwrap_or(&final_path)
            .to_path_buf();
        let handle = RecordingHandle(self.next_handle);
        self.next_handle += 1;
        self.open.insert(
            handle,
            OpenRecording {
                meta: RecordingMeta {
                    session_id: req.session_id,
                    round: req.round,
                    slot_index: req.slot_index,
                    participant_id: req.participant_id,
                    started_at: at,
                    ended_at: at,
                    media_type: req.media_type,
                    path: rel,
                    byte_len: 0,
                    finalized: false,
                },
                file,
                part_path,
                final_path,
                meta_path,
                slot_duration_s: slot.duration_s,
            },
        );
        Ok(handle)
    }

    /// Appends `bytes` verbatim and returns the new length.
    pub fn append_chunk(
        &mut self,
        handle: RecordingHandle,
        bytes: &[u8],
    ) -> Result<u64, AudioError> {
        let limit = self.max_chunk_bytes;
        let rec = self.open_mut(handle)?;
        if bytes.is_empty() {
            return Err(AudioError::ZeroLengthChunk);
        }
        if bytes.len() > limit {
            return Err(AudioError::ChunkTooLarge {
                len: bytes.len(),
                limit,
            });
        }
        rec.file.write_all(bytes)?;
        rec.meta.byte_len += bytes.len() as u64;
        Ok(rec.meta.byte_len)
    }

    /// Makes the recording durable and visible.
    pub fn finalize_recording(
        &mut self,
        handle: RecordingHandle,
        ended_at: Timestamp,
    ) -> Result<RecordingMeta, AudioError> {
        let rec = self.open_mut(handle)?;
        if rec.meta.byte_len == 0 {
            return Err(AudioError::EmptyRecording);
        }
        if ended_at < rec.meta.started_at {
            return Err(AudioError::ClockSkew {
                started_at: rec.meta.started_at,
                ended_at,
            });
        }
        let mut rec = self.open.remove(&handle).expect("checked above");
        rec.meta.ended_at = ended_at;
        rec.meta.finalized = true;
        let took_s = ended_at.since(rec.meta.started_at) / 1000;
        if took_s > u64::from(rec.slot_duration_s) + DURATION_GRACE_S {
            tracing::warn!(
                session = %rec.meta.session_id,
                round = %rec.meta.round,
                slot = rec.meta.slot_index,
                took_s,
                slot_s = rec.slot_duration_s,
                "recording ran past its slot"
            );
        }
        rec.file.flush()?;
        rec.file.sync_all()?;
        drop(rec.file);

        let meta_part = rec.meta_path.with_extension("meta.part");
        fs::write(&meta_part, rec.meta.to_sidecar())?;
        fs::rename(&meta_part, &rec.meta_path)?;
        fs::rename(&rec.part_path, &rec.final_path)?;
        self.closed.insert(handle);
        Ok(rec.meta)
    }

    /// Finalized recordings of `session`, ordered by round then slot.
    pub fn list_recordings(&self, session: &SessionId) -> Result<Vec<RecordingMeta>, AudioError> {
        let dir = self.audio_dir(session);
        if !dir.is_dir() {
            return Err(AudioError::UnknownSession(session.clone()));
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("meta") {
                continue;
            }
            let Ok(meta) = RecordingMeta::from_sidecar(&fs::read_to_string(&path)?) else {
                continue;
            };
            if meta.finalized && self.data_dir.join(&meta.path).is_file() {
                out.push(meta);
            }
        }
        out.sort_by_key(|m| (m.round, m.slot_index));
        Ok(out)
    }

    /// Handles still accepting chunks.
    pub fn open_handles(&self) -> Vec<RecordingHandle> {
        let mut handles: Vec<_> = self.open.keys().copied().collect();
        handles.sort_by_key(|h| h.0);
        handles
    }

    pub fn resolve(&self, meta: &RecordingMeta) -> PathBuf {
        self.data_dir.join(&meta.path)
    }

    fn open_mut(&mut self, handle: RecordingHandle) -> Result<&mut OpenRecording, AudioError> {
        if self.closed.contains(&handle) {
            return Err(AudioError::RecordingClosed(handle));
        }
        self.open
            .get_mut(&handle)
            .ok_or(AudioError::UnknownHandle(handle))
    }

    fn finalized_exists(&self, dir: &Path, round: Round, slot: u32) -> Result<bool, AudioError> {
        let prefix = format!("{round}-{slot}-");
        for entry in fs::read_dir(dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if name.starts_with(&prefix) && name.ends_with(".meta") {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

fn clean_audio_dir(data_dir: &Path, dir: &Path) -> Result<(), AudioError> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if name.ends_with(".part") {
            fs::remove_file(&path)?;
            continue;
        }
        if name.ends_with(".meta") {
            let orphan = match fs::read_to_string(&path)
                .ok()
                .and_then(|t| RecordingMeta::from_sidecar(&t).ok())
            {
                Some(meta) => !data_dir.join(&meta.path).is_file(),
                None => true,
            };
            if orphan {
                fs::remove_file(&path)?;
            }
        }
    }
    Ok(())
}

/// Container extension for a declared media type such as
/// `audio/webm;codecs=opus`.
pub fn extension_for(media_type: &str) -> Option<&'static str> {
    let essence = media_type.split(';').next()?.trim().to_ascii_lowercase();
    Some(match essence.as_str() {
        "audio/webm" | "video/webm" => "webm",
        "audio/ogg" | "application/ogg" => "ogg",
        "audio/wav" | "audio/wave" | "audio/x-wav" => "wav",
        "audio/mp4" | "audio/x-m4a" => "m4a",
        "audio/mpeg" => "mp3",
        "audio/flac" => "flac",
        _ => return None,
    })
}
