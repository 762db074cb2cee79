//! Scripted replay of the preliminary experiment: four participants, one
//! session on the trial-run preset. Voice registration never worked (two
//! misheard names per person before typing), voice topic search worked six
//! times out of nine.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use coimagine_core::domain::{Command, InputSource, Locale, ParticipantId, Round, SessionConfig};
use coimagine_core::grammar::LocalePacks;
use coimagine_core::images::{FixtureProvider, ImageService};
use coimagine_core::metrics::{Feature, Outcome};
use coimagine_core::{Coordinator, CoordinatorOptions, SimulatedClock, Timestamp};

pub const START: Timestamp = Timestamp(1_000);

const NAMES: [(&str, [&str; 2]); 4] = [
    ("Suzuki", ["my name is suzuki", "sue's key"]),
    ("Tanaka", ["tanaka desu", "tanaka this"]),
    ("Sato", ["sato", "satoh to"]),
    ("Yamada", ["yamada desu", "llama da"]),
];

/// Topic keyword and the facilitator's marks for its voice attempts.
const TOPICS: [(&str, &[Outcome]); 4] = [
    ("fried chicken", &[Outcome::Failure, Outcome::Success]),
    (
        "sushi",
        &[Outcome::Failure, Outcome::Success, Outcome::Success],
    ),
    ("tempura", &[Outcome::Failure, Outcome::Success]),
    ("ramen", &[Outcome::Success, Outcome::Success]),
];

pub fn fixture_images() -> std::path::PathBuf {
    // Also compiled into the server's acceptance target, one crate over.
    let here = Path::new(env!("CARGO_MANIFEST_DIR"));
    let core = if here.ends_with("core") {
        here.to_path_buf()
    } else {
        here.join("../core")
    };
    core.join("fixtures/images")
}

pub fn open(work: &Path, clock: &SimulatedClock) -> Coordinator {
    let images = ImageService::new(
        Arc::new(FixtureProvider::new(fixture_images())),
        work.join("cache"),
    )
    .expect("image cache");
    Coordinator::open(
        CoordinatorOptions {
            data_dir: work.join("data"),
            config: SessionConfig::trial_run(Locale::En),
            packs: LocalePacks::builtin(),
        },
        images,
        Arc::new(clock.clone()),
    )
    .expect("coordinator")
}

/// Runs the experiment in `work` and returns the session log text.
pub async fn generate(work: &Path) -> String {
    let clock = SimulatedClock::new(START);
    let c = open(work, &clock);
    let sid = c.current_session();
    let mark = |p: u32, feature, outcome| {
        c.record_attempt(&sid, feature, ParticipantId(p), outcome)
            .expect("mark");
    };

    c.execute(Command::OpenRegistration).unwrap();
    for (i, (name, misheard)) in NAMES.iter().enumerate() {
        let id = i as u32 + 1;
        for heard in misheard {
            clock.advance_secs(8);
            c.execute(Command::ProposeName {
                name: heard.to_string(),
                via: InputSource::Voice,
            })
            .unwrap();
        }
        clock.advance_secs(15);
        c.execute(Command::ProposeName {
            name: name.to_string(),
            via: InputSource::Typed,
        })
        .unwrap();
        c.confirm_name(None).unwrap();
        for _ in misheard {
            mark(id, Feature::VoiceRegistration, Outcome::Failure);
        }
    }
    clock.advance_secs(5);
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
    clock.advance_secs(3);
    c.execute(Command::SelectTheme { theme }).unwrap();

    for (i, (keyword, marks)) in TOPICS.iter().enumerate() {
        let id = i as u32 + 1;
        for outcome in *marks {
            clock.advance_secs(10);
            mark(id, Feature::VoiceImageSearch, *outcome);
        }
        c.submit_topic(ParticipantId(id), keyword, InputSource::Voice)
            .await
            .unwrap();
    }

    for round in [Round::Speaking, Round::Qa] {
        if round == Round::Qa {
            clock.advance_secs(20);
            c.execute(Command::Ready { participant: None }).unwrap();
        }
        for slot in 0..4u32 {
            let who = ParticipantId(slot + 1);
            let h = c.begin_recording(round, slot, who, "audio/webm").unwrap();
            for chunk in 0..3u8 {
                clock.advance_secs(99);
                c.append_chunk(h, &[round as u8, slot as u8, chunk, 0x1a, 0x45, 0xdf, 0xa3])
                    .unwrap();
            }
            clock.advance_secs(2);
            c.finalize_recording(h).unwrap();
            clock.advance_secs(1);
            c.tick().unwrap();
        }
    }
    assert!(
        c.snapshot().completed().is_some(),
        "session reached closing"
    );
    let path = coimagine_core::coordinator::log_path(&work.join("data"), &sid);
    std::fs::read_to_string(path).expect("log")
}
