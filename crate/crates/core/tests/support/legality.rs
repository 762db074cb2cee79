//! Random command sequences checked against a hand-written table of which
//! commands each phase accepts and which phase changes may follow.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use coimagine_core::domain::{
    Command, CommandKind, InputSource, Locale, ParticipantId, Phase, PhaseView, SessionConfig,
    SessionId, SessionState, ThemeId, Transition,
};
use coimagine_core::images::{ImageRef, ProviderKind};
use coimagine_core::Timestamp;

/// Commands a phase may accept. Anything else must be rejected.
pub fn accepts(phase: Phase, kind: CommandKind) -> bool {
    use CommandKind as K;
    use Phase as P;
    if kind == K::Tick {
        return true;
    }
    let allowed: &[CommandKind] = match phase {
        P::Home => &[
            K::OpenRegistration,
            K::StartSession,
            K::SetConfig,
            K::CreateTheme,
            K::SetThemeActive,
            K::SetParticipantActive,
        ],
        P::Registration => &[
            K::ProposeName,
            K::ConfirmName,
            K::Back,
            K::CreateTheme,
            K::SetThemeActive,
            K::SetParticipantActive,
        ],
        P::SessionSelection => &[
            K::Back,
            K::SetConfig,
            K::CreateTheme,
            K::SetThemeActive,
            K::SetParticipantActive,
            K::SelectTheme,
        ],
        P::TopicCollection => &[K::SetParticipantActive, K::SubmitTopic, K::AttachImage],
        P::Preparation | P::QaPreparation => &[K::Ready],
        P::Speaking | P::Qa | P::Closing => &[],
    };
    allowed.contains(&kind)
}

/// Whether `t` is a phase change the protocol allows, given the session's
/// configuration and roster size at the time.
pub fn edge_allowed(t: &Transition, config: &SessionConfig, roster: usize) -> bool {
    use CommandKind as K;
    use Phase as P;
    let (from, to) = (t.from, t.to);
    let slot = |v: PhaseView| v.slot.unwrap_or(0) as usize;
    let rounds_start = if config.prep_before_speaking_s.is_some() {
        P::Preparation
    } else {
        P::Speaking
    };
    match (from.phase, to.phase, t.cause) {
        (P::Home, P::Registration, K::OpenRegistration) => true,
        (P::Registration, P::Home, K::Back) => true,
        (P::Home, P::SessionSelection, K::StartSession) => true,
        (P::SessionSelection, P::Home, K::Back) => true,
        (P::SessionSelection, P::TopicCollection, K::SelectTheme) => slot(to) == 0,
        (P::TopicCollection, P::TopicCollection, K::SubmitTopic | K::AttachImage) => {
            slot(to) == slot(from) + 1
        }
        // Withdrawing the current speaker hands the turn to whoever is next;
        // withdrawing someone earlier moves the current speaker up a seat.
        (P::TopicCollection, P::TopicCollection, K::SetParticipantActive) => {
            (slot(to) == slot(from) && to.participant != from.participant)
                || (slot(to) + 1 == slot(from) && to.participant == from.participant)
        }
        (P::TopicCollection, p, K::SubmitTopic | K::AttachImage | K::SetParticipantActive) => {
            p == rounds_start && to.slot == (p == P::Speaking).then_some(0)
        }
        (P::Preparation, P::Speaking, K::Ready | K::Tick) => slot(to) == 0,
        (P::Speaking, P::Speaking, K::Tick) => slot(to) == slot(from) + 1,
        (P::Speaking, P::QaPreparation, K::Tick) => slot(from) + 1 == roster,
        (P::QaPreparation, P::Qa, K::Ready) => slot(to) == 0,
        (P::QaPreparation, P::Qa, K::Tick) => config.qa_prep_timed && slot(to) == 0,
        (P::Qa, P::Qa, K::Tick) => slot(to) == slot(from) + 1,
        (P::Qa, P::Closing, K::Tick) => slot(from) + 1 == roster,
        _ => false,
    }
}

/// Expected length of the phase a timer transition leaves.
fn timer_length(from: Phase, config: &SessionConfig) -> Option<u32> {
    match from {
        Phase::Preparation => config.prep_before_speaking_s,
        Phase::Speaking => Some(config.speaking_slot_s),
        Phase::QaPreparation if config.qa_prep_timed => config.prep_before_speaking_s,
        Phase::Qa => Some(config.qa_slot_s),
        _ => None,
    }
}

const NAMES: [&str; 6] = ["Suzuki", "Tanaka", "suzuki", "Sato", "", "Ito"];
const KEYWORDS: [&str; 4] = ["fried chicken", "naruto", "  ", "sushi"];

pub fn image(keyword: &str) -> ImageRef {
    ImageRef {
        source_url: format!("fixture://en/{keyword}/1.jpg"),
        local_path: format!("{keyword}.jpg").into(),
        query: keyword.to_string(),
        provider: ProviderKind::Fixture,
        fetched_at: Timestamp::ZERO,
    }
}

fn random_config(rng: &mut StdRng) -> SessionConfig {
    let locale = *Locale::ALL.choose(rng).unwrap();
    match rng.gen_range(0..4) {
        0 => SessionConfig::trial_run(locale),
        1 => SessionConfig::elder(locale),
        2 => SessionConfig {
            locale,
            prep_before_speaking_s: Some(rng.gen_range(1..30)),
            speaking_slot_s: rng.gen_range(1..30),
            qa_slot_s: rng.gen_range(1..30),
            qa_prep_timed: rng.gen_bool(0.5),
        },
        // Sometimes invalid.
        _ => SessionConfig {
            locale,
            prep_before_speaking_s: None,
            speaking_slot_s: rng.gen_range(0..3),
            qa_slot_s: rng.gen_range(0..3),
            qa_prep_timed: rng.gen_bool(0.5),
        },
    }
}

/// Draws a command, biased towards ones the current phase might accept so
/// sequences get deep into the protocol.
pub fn random_command(rng: &mut StdRng, state: &SessionState) -> Command {
    let pid = |rng: &mut StdRng| {
        if rng.gen_bool(0.8) {
            state
                .roster
                .get(state.slot_index as usize)
                .copied()
                .unwrap_or(ParticipantId(rng.gen_range(0..6)))
        } else {
            ParticipantId(rng.gen_range(0..6))
        }
    };
    let kinds = [
        CommandKind::OpenRegistration,
        CommandKind::ProposeName,
        CommandKind::ConfirmName,
        CommandKind::Back,
        CommandKind::StartSession,
        CommandKind::SetConfig,
        CommandKind::CreateTheme,
        CommandKind::SetThemeActive,
        CommandKind::SetParticipantActive,
        CommandKind::SelectTheme,
        CommandKind::SubmitTopic,
        CommandKind::AttachImage,
        CommandKind::Ready,
        CommandKind::Tick,
    ];
    let kind = if rng.gen_bool(0.6) {
        let fitting: Vec<_> = kinds.iter().filter(|k| accepts(state.phase, **k)).collect();
        **fitting.choose(rng).unwrap()
    } else {
        *kinds.choose(rng).unwrap()
    };
    match kind {
        CommandKind::OpenRegistration => Command::OpenRegistration,
        CommandKind::ProposeName => Command::ProposeName {
            name: NAMES.choose(rng).unwrap().to_string(),
            via: if rng.gen_bool(0.5) {
                InputSource::Voice
            } else {
                InputSource::Typed
            },
        },
        CommandKind::ConfirmName => Command::ConfirmName,
        CommandKind::Back => Command::Back,
        CommandKind::StartSession => Command::StartSession,
        CommandKind::SetConfig => Command::SetConfig {
            config: random_config(rng),
        },
        CommandKind::CreateTheme => {
            let mut titles = BTreeMap::new();
            titles.insert(Locale::En, "Favorite food".to_string());
            if rng.gen_bool(0.9) {
                titles.insert(Locale::Ja, "好きな食べ物".to_string());
            }
            Command::CreateTheme { titles }
        }
        CommandKind::SetThemeActive => Command::SetThemeActive {
            theme: ThemeId(rng.gen_range(0..4)),
            active: rng.gen_bool(0.5),
        },
        CommandKind::SetParticipantActive => Command::SetParticipantActive {
            participant: pid(rng),
            active: rng.gen_bool(0.3),
        },
        CommandKind::SelectTheme => Command::SelectTheme {
            theme: ThemeId(rng.gen_range(0..4)),
        },
        CommandKind::SubmitTopic => {
            let keyword = KEYWORDS.choose(rng).unwrap();
            Command::SubmitTopic {
                participant: pid(rng),
                keyword: keyword.to_string(),
                source: InputSource::Voice,
                image: rng.gen_bool(0.7).then(|| image(keyword)),
            }
        }
        CommandKind::AttachImage => Command::AttachImage {
            participant: pid(rng),
            image: image("manual"),
        },
        CommandKind::Ready => Command::Ready {
            participant: rng.gen_bool(0.5).then(|| pid(rng)),
        },
        CommandKind::Tick => Command::Tick,
    }
}

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub sequences: usize,
    pub commands: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub transitions: usize,
    pub phases_reached: BTreeMap<Phase, usize>,
    pub violations: Vec<String>,
}

/// Runs `sequences` random sequences of up to `max_len` commands each.
pub fn fuzz(sequences: usize, max_len: usize, seed: u64) -> FuzzReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut report = FuzzReport {
        sequences,
        ..FuzzReport::default()
    };
    for n in 0..sequences {
        let mut state =
            SessionState::new(SessionId::numbered(n as u32 + 1), random_config(&mut rng));
        if state.config.validate().is_err() {
            state.config = SessionConfig::default();
        }
        let mut now = Timestamp::ZERO;
        let len = rng.gen_range(1..=max_len);
        for step in 0..len {
            if rng.gen_bool(0.3) {
                now = Timestamp(now.millis() + rng.gen_range(0..400_000));
            }
            // Occasionally offer a timestamp from the past.
            let at = if rng.gen_bool(0.02) && now.millis() > 0 {
                Timestamp(now.millis() - 1)
            } else {
                now
            };
            let cmd = random_command(&mut rng, &state);
            let before = state.clone();
            let result = state.apply(&cmd, at);
            report.commands += 1;
            let ctx = || format!("seq {n} step {step}: {cmd:?} in {:?}", before.view());
            match result {
                Err(_) => {
                    report.rejected += 1;
                    if state != before {
                        report
                            .violations
                            .push(format!("{}: rejection changed state", ctx()));
                    }
                }
                Ok(transitions) => {
                    report.accepted += 1;
                    if !accepts(before.phase, cmd.kind()) {
                        report.violations.push(format!("{}: accepted", ctx()));
                    }
                    if at < before.last_event_at() {
                        report
                            .violations
                            .push(format!("{}: accepted a past timestamp", ctx()));
                    }
                    let mut entered = before.phase_entered_at;
                    let mut prev = before.view();
                    for t in &transitions {
                        report.transitions += 1;
                        *report.phases_reached.entry(t.to.phase).or_default() += 1;
                        if t.from != prev || !edge_allowed(t, &state.config, state.roster.len()) {
                            report
                                .violations
                                .push(format!("{}: illegal edge {t:?}", ctx()));
                        }
                        if t.cause == CommandKind::Tick {
                            let expected = timer_length(t.from.phase, &state.config)
                                .map(|s| entered.plus_secs(s));
                            if expected != Some(t.at) {
                                report.violations.push(format!(
                                    "{}: timer fired at {} instead of {expected:?}",
                                    ctx(),
                                    t.at
                                ));
                            }
                        }
                        entered = t.at;
                        prev = t.to;
                    }
                    if prev != state.view() {
                        report
                            .violations
                            .push(format!("{}: trace ends elsewhere", ctx()));
                    }
                }
            }
        }
    }
    report
}
