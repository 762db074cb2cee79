//! The memory task: images shown across earlier sessions come back in a
//! random order and each participant guesses whose image it was and which
//! theme it belonged to.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ParticipantId, SessionId, ThemeId};
use crate::images::ImageRef;

/// What a finished session contributes to the memory task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletedSession {
    pub session_id: SessionId,
    pub theme_id: ThemeId,
    pub images: Vec<(ParticipantId, ImageRef)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub image: ImageRef,
    pub true_owner: ParticipantId,
    pub true_theme: ThemeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guess {
    pub owner: ParticipantId,
    pub theme: ThemeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum MemoryTaskError {
    #[error("no images in the given sessions")]
    NoSourceImages,
    #[error("item {index} does not exist")]
    UnknownItem { index: usize },
    #[error("{participant} has guessed {guessed} of {total} items")]
    IncompleteGuesses {
        participant: ParticipantId,
        guessed: usize,
        total: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryTask {
    pub items: Vec<MemoryItem>,
    /// Per guesser, one slot per item.
    pub guesses: BTreeMap<ParticipantId, Vec<Option<Guess>>>,
}

/// Collects every image of `sessions` exactly once and shuffles them with a
/// seeded generator.
pub fn build_memory_task(
    sessions: &[CompletedSession],
    seed: u64,
) -> Result<MemoryTask, MemoryTaskError> {
    let mut items: Vec<MemoryItem> = sessions
        .iter()
        .flat_map(|s| {
            s.images.iter().map(move |(owner, image)| MemoryItem {
                image: image.clone(),
                true_owner: *owner,
                true_theme: s.theme_id,
            })
        })
        .collect();
    if items.is_empty() {
        return Err(MemoryTaskError::NoSourceImages);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    Ok(MemoryTask {
        items,
        guesses: BTreeMap::new(),
    })
}

impl MemoryTask {
    pub fn record_guess(
        &mut self,
        participant: ParticipantId,
        index: usize,
        guess: Guess,
    ) -> Result<(), MemoryTaskError> {
        if index >= self.items.len() {
            return Err(MemoryTaskError::UnknownItem { index });
        }
        let n = self.items.len();
        self.guesses
            .entry(participant)
            .or_insert_with(|| vec![None; n])[index] = Some(guess);
        Ok(())
    }

    /// Owner and theme are scored independently, so the denominator is twice
    /// the item count.
    pub fn score(&self, participant: ParticipantId) -> Result<Ratio<u64>, MemoryTaskError> {
        let total = self.items.len();
        let slots = self.guesses.get(&participant);
        let guessed = slots.map_or(0, |g| g.iter().flatten().count());
        let Some(slots) = slots.filter(|_| guessed == total) else {
            return Err(MemoryTaskError::IncompleteGuesses {
                participant,
                guessed,
                total,
            });
        };
        let correct: u64 = self
            .items
            .iter()
            .zip(slots.iter().flatten())
            .map(|(item, g)| {
                u64::from(item.true_owner == g.owner) + u64::from(item.true_theme == g.theme)
            })
            .sum();
        Ok(Ratio::new(correct, 2 * total as u64))
    }
}
