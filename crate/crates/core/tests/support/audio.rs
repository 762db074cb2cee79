//! Chunked uploads of random payloads and simulated crashes.

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use coimagine_core::audio::{AudioStore, BeginRecording, RecordingMeta};
use coimagine_core::domain::{ActiveSlot, ParticipantId, Round, SessionId};
use coimagine_core::Timestamp;

fn slot(round: Round, slot_index: u32) -> ActiveSlot {
    ActiveSlot {
        round,
        slot_index,
        participant_id: ParticipantId(slot_index + 1),
        started_at: Timestamp::from_secs(10),
        duration_s: 90,
    }
}

fn request(round: Round, slot_index: u32) -> BeginRecording {
    BeginRecording {
        session_id: SessionId::numbered(1),
        round,
        slot_index,
        participant_id: ParticipantId(slot_index + 1),
        media_type: "audio/webm;codecs=opus".into(),
    }
}

/// Uploads `len` random bytes in random-sized chunks and checks the stored
/// file against the digest of the whole payload.
pub fn upload_random(seed: u64, len: usize) -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut payload = vec![0u8; len];
    rng.fill_bytes(&mut payload);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut store = AudioStore::open(dir.path()).map_err(|e| e.to_string())?;
    let sid = SessionId::numbered(1);
    store.ensure_session(&sid).map_err(|e| e.to_string())?;
    let round = if rng.gen_bool(0.5) {
        Round::Speaking
    } else {
        Round::Qa
    };
    let h = store
        .begin_recording(
            request(round, 2),
            Some(slot(round, 2)),
            Timestamp::from_secs(10),
        )
        .map_err(|e| e.to_string())?;
    let mut hasher = Sha256::new();
    let mut rest = payload.as_slice();
    while !rest.is_empty() {
        let n = rng.gen_range(1..=rest.len().min(store.max_chunk_bytes()).min(1 << 20));
        let (chunk, tail) = rest.split_at(n);
        hasher.update(chunk);
        store.append_chunk(h, chunk).map_err(|e| e.to_string())?;
        rest = tail;
    }
    let meta = store
        .finalize_recording(h, Timestamp::from_secs(95))
        .map_err(|e| e.to_string())?;
    let want = hex::encode(hasher.finalize());
    let whole = hex::encode(Sha256::digest(&payload));
    let stored = std::fs::read(store.resolve(&meta)).map_err(|e| e.to_string())?;
    let got = hex::encode(Sha256::digest(&stored));
    if got != want || got != whole {
        return Err(format!("digest {got}, expected {want}"));
    }
    if meta.byte_len != len as u64 {
        return Err(format!("meta says {} bytes, uploaded {len}", meta.byte_len));
    }
    let listed = store.list_recordings(&sid).map_err(|e| e.to_string())?;
    if listed != [meta.clone()] {
        return Err(format!("listing shows {listed:?}"));
    }
    let text = std::fs::read_to_string(store.resolve(&meta).with_extension("meta")).unwrap();
    if RecordingMeta::from_sidecar(&text).ok() != Some(meta) {
        return Err("sidecar does not round-trip".into());
    }
    Ok(got)
}

/// Writes part of a recording, abandons the store without finalizing, and
/// also leaves a sidecar whose audio never arrived. Neither may be listed,
/// before or after the store is reopened, and reopening clears the debris.
pub fn crash_before_finalize(seed: u64) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sid = SessionId::numbered(1);
    {
        let mut store = AudioStore::open(dir.path()).map_err(|e| e.to_string())?;
        store.ensure_session(&sid).map_err(|e| e.to_string())?;
        let h = store
            .begin_recording(
                request(Round::Speaking, 0),
                Some(slot(Round::Speaking, 0)),
                Timestamp::from_secs(10),
            )
            .map_err(|e| e.to_string())?;
        for _ in 0..rng.gen_range(1..5) {
            let mut chunk = vec![0u8; rng.gen_range(1..50_000)];
            rng.fill_bytes(&mut chunk);
            store.append_chunk(h, &chunk).map_err(|e| e.to_string())?;
        }
        let audio_dir = dir.path().join("sessions").join(sid.as_str()).join("audio");
        let orphan = RecordingMeta {
            session_id: sid.clone(),
            round: Round::Qa,
            slot_index: 1,
            participant_id: ParticipantId(2),
            started_at: Timestamp::from_secs(10),
            ended_at: Timestamp::from_secs(90),
            media_type: "audio/webm".into(),
            path: format!("sessions/{sid}/audio/qa-1-p2.webm").into(),
            byte_len: 10,
            finalized: true,
        };
        std::fs::write(audio_dir.join("qa-1-p2.meta"), orphan.to_sidecar()).unwrap();
        std::fs::write(audio_dir.join("qa-1-p2.webm.part"), b"0123456789").unwrap();
        if !store
            .list_recordings(&sid)
            .map_err(|e| e.to_string())?
            .is_empty()
        {
            return Err("unfinished recording is visible".into());
        }
        // Dropped here without finalizing.
    }
    let store = AudioStore::open(dir.path()).map_err(|e| e.to_string())?;
    if !store
        .list_recordings(&sid)
        .map_err(|e| e.to_string())?
        .is_empty()
    {
        return Err("recording visible after restart".into());
    }
    let audio_dir = dir.path().join("sessions").join(sid.as_str()).join("audio");
    let left: Vec<_> = std::fs::read_dir(&audio_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    if !left.is_empty() {
        return Err(format!("restart left {left:?}"));
    }
    Ok(())
}
