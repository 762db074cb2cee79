//! Per-feature attempt counting and success rates.
//!
//! Rates are exact rationals and are only rounded (half up, two decimals)
//! when formatted.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize, Serializer};

use crate::clock::Timestamp;
use crate::domain::{ParticipantId, Phase, SessionId, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Registration,
    ImageSearch,
    AudioSpeaking,
    AudioQa,
    VoiceRegistration,
    VoiceImageSearch,
}

impl Feature {
    /// Report row order.
    pub const ALL: [Feature; 6] = [
        Feature::Registration,
        Feature::ImageSearch,
        Feature::AudioSpeaking,
        Feature::AudioQa,
        Feature::VoiceRegistration,
        Feature::VoiceImageSearch,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Feature::Registration => "Participant Registration",
            Feature::ImageSearch => "Image Search",
            Feature::AudioSpeaking => "Audio Recording: Speaking Round",
            Feature::AudioQa => "Audio Recording: Question-and-Answer Round",
            Feature::VoiceRegistration => "Voice Interface: Participant Registration",
            Feature::VoiceImageSearch => "Voice Interface: Image Search",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

/// Who recorded an attempt: the system when it can observe the result
/// itself, otherwise the facilitator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOrigin {
    System,
    #[default]
    Facilitator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub session_id: SessionId,
    pub feature: Feature,
    pub participant_id: ParticipantId,
    pub outcome: Outcome,
    pub at: Timestamp,
    #[serde(default)]
    pub origin: AttemptOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureReport {
    pub feature: Feature,
    pub attempts: u64,
    pub successes: u64,
    /// `None` when there were no attempts.
    pub rate: Option<Ratio<u64>>,
}

impl FeatureReport {
    /// Success rate in percent with two decimals, or `n/a`.
    pub fn percent(&self) -> String {
        match self.rate {
            None => "n/a".to_string(),
            Some(rate) => format_percent(rate),
        }
    }
}

impl Serialize for FeatureReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Row<'a> {
            feature: Feature,
            label: &'a str,
            attempts: u64,
            successes: u64,
            rate_percent: String,
        }
        Row {
            feature: self.feature,
            label: self.feature.label(),
            attempts: self.attempts,
            successes: self.successes,
            rate_percent: self.percent(),
        }
        .serialize(serializer)
    }
}

/// `rate` as a percentage rounded half up to hundredths.
pub fn format_percent(rate: Ratio<u64>) -> String {
    let (n, d) = (*rate.numer(), *rate.denom());
    let hundredths = (n * 10_000 * 2 + d) / (2 * d);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

pub fn feature_report<'a>(
    records: impl IntoIterator<Item = &'a AttemptRecord>,
    feature: Feature,
) -> FeatureReport {
    let (attempts, successes) = records
        .into_iter()
        .filter(|r| r.feature == feature)
        .fold((0u64, 0u64), |(a, s), r| {
            (a + 1, s + u64::from(r.outcome == Outcome::Success))
        });
    FeatureReport {
        feature,
        attempts,
        successes,
        rate: (attempts > 0).then(|| Ratio::new(successes, attempts)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotDuration {
    pub slot: u32,
    pub participant_id: Option<ParticipantId>,
    pub millis: u64,
}

/// Lengths of the completed slots of `phase`, from a transition trace.
pub fn slot_durations(transitions: &[Transition], phase: Phase) -> Vec<SlotDuration> {
    let mut out = Vec::new();
    let mut open: Option<(u32, Option<ParticipantId>, Timestamp)> = None;
    for tr in transitions {
        if let Some((slot, participant, start)) = open.take() {
            out.push(SlotDuration {
                slot,
                participant_id: participant,
                millis: tr.at.since(start),
            });
        }
        if tr.to.phase == phase {
            open = Some((tr.to.slot.unwrap_or(0), tr.to.participant, tr.at));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionReport {
    pub session_id: SessionId,
    pub features: Vec<FeatureReport>,
    pub speaking_durations: Vec<SlotDuration>,
    pub qa_durations: Vec<SlotDuration>,
}

impl SessionReport {
    pub fn build(
        session_id: SessionId,
        attempts: &[AttemptRecord],
        transitions: &[Transition],
    ) -> Self {
        SessionReport {
            session_id,
            features: Feature::ALL
                .iter()
                .map(|f| feature_report(attempts, *f))
                .collect(),
            speaking_durations: slot_durations(transitions, Phase::Speaking),
            qa_durations: slot_durations(transitions, Phase::Qa),
        }
    }

    /// Comma-separated export: feature, attempts, success rate in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,attempts,success_rate_percent\n");
        for row in &self.features {
            out.push_str(&format!(
                "{},{},{}\n",
                row.feature.label(),
                row.attempts,
                row.percent()
            ));
        }
        out
    }
}
