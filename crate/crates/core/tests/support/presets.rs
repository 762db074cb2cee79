//! A four-participant session driven start to finish under a simulated
//! clock, for checking phase lengths.

use std::collections::BTreeMap;

use coimagine_core::domain::{
    Command, InputSource, Locale, ParticipantId, Phase, SessionConfig, Transition,
};
use coimagine_core::eventlog::EntryBody;
use coimagine_core::{Coordinator, SimulatedClock, Timestamp};

pub struct Run {
    pub transitions: Vec<Transition>,
    pub final_phase: Phase,
}

/// Registers `n` people, creates a theme and selects it, leaving the
/// session at the first topic turn.
pub fn to_topics(c: &Coordinator, n: usize) {
    c.execute(Command::OpenRegistration).unwrap();
    for name in ["Suzuki", "Tanaka", "Sato", "Yamada", "Ito", "Kato"]
        .iter()
        .take(n)
    {
        c.execute(Command::ProposeName {
            name: name.to_string(),
            via: InputSource::Typed,
        })
        .unwrap();
        c.confirm_name(None).unwrap();
    }
    c.execute(Command::Back).unwrap();
    c.execute(Command::CreateTheme {
        titles: BTreeMap::from([
            (Locale::En, "Favorite food".to_string()),
            (Locale::Ja, "好きな食べ物".to_string()),
        ]),
    })
    .unwrap();
    c.execute(Command::StartSession).unwrap();
    let theme = c.snapshot().themes[0].id;
    c.execute(Command::SelectTheme { theme }).unwrap();
}

/// Registers four people, collects a topic each and then only lets time
/// pass (plus a ready tap where a phase has no timer) until closing.
pub async fn four_participants(
    c: &Coordinator,
    clock: &SimulatedClock,
    config: SessionConfig,
) -> Run {
    c.execute(Command::SetConfig { config }).unwrap();
    to_topics(c, 4);
    for (i, topic) in ["fried chicken", "sushi", "tempura", "ramen"]
        .iter()
        .enumerate()
    {
        clock.advance_secs(7);
        c.submit_topic(ParticipantId(i as u32 + 1), topic, InputSource::Typed)
            .await
            .unwrap();
    }
    let mut guard = 0;
    while c.snapshot().phase != Phase::Closing && guard < 10_000 {
        guard += 1;
        clock.advance_secs(1);
        c.tick().unwrap();
        if c.snapshot().phase == Phase::QaPreparation {
            clock.advance_secs(12);
            c.execute(Command::Ready { participant: None }).unwrap();
        }
    }
    let transitions = c
        .entries(&c.current_session())
        .unwrap()
        .into_iter()
        .filter_map(|e| match e.body {
            EntryBody::Transition(t) => Some(t),
            _ => None,
        })
        .collect();
    Run {
        transitions,
        final_phase: c.snapshot().phase,
    }
}

pub fn slot_lengths(run: &Run, phase: Phase) -> Vec<u64> {
    coimagine_core::metrics::slot_durations(&run.transitions, phase)
        .into_iter()
        .map(|d| d.millis)
        .collect()
}

pub fn start() -> Timestamp {
    Timestamp(1_000)
}
