//! Random memory-task instances and an independent recount of scores.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use coimagine_core::domain::{
    build_memory_task, CompletedSession, Guess, MemoryTask, ParticipantId, SessionId, ThemeId,
};
use coimagine_core::images::{ImageRef, ProviderKind};
use coimagine_core::Timestamp;

pub fn sessions(rng: &mut StdRng, max_items: usize) -> Vec<CompletedSession> {
    let mut left = rng.gen_range(1..=max_items);
    let mut out = Vec::new();
    let mut n = 0u32;
    while left > 0 {
        let take = rng.gen_range(1..=left.min(6));
        let images = (1..=take as u32)
            .map(|p| {
                n += 1;
                (
                    ParticipantId(p),
                    ImageRef {
                        source_url: format!("fixture://en/item{n}/1.jpg"),
                        local_path: format!("{n:064x}.jpg").into(),
                        query: format!("item {n}"),
                        provider: ProviderKind::Fixture,
                        fetched_at: Timestamp(u64::from(n)),
                    },
                )
            })
            .collect();
        out.push(CompletedSession {
            session_id: SessionId::numbered(out.len() as u32 + 1),
            theme_id: ThemeId(rng.gen_range(1..=4)),
            images,
        });
        left -= take;
    }
    out
}

/// Counts correct answers by looking each guessed image up in the source
/// sessions rather than in the task's own item list.
pub fn brute_force_score(
    sources: &[CompletedSession],
    task: &MemoryTask,
    guesser: ParticipantId,
) -> Ratio<u64> {
    let truth: BTreeMap<&str, (ParticipantId, ThemeId)> = sources
        .iter()
        .flat_map(|s| {
            s.images
                .iter()
                .map(move |(p, img)| (img.source_url.as_str(), (*p, s.theme_id)))
        })
        .collect();
    let guesses = &task.guesses[&guesser];
    let mut correct = 0u64;
    for (item, guess) in task.items.iter().zip(guesses) {
        let (owner, theme) = truth[item.image.source_url.as_str()];
        let guess = guess.expect("complete");
        if guess.owner == owner {
            correct += 1;
        }
        if guess.theme == theme {
            correct += 1;
        }
    }
    Ratio::new(correct, 2 * truth.len() as u64)
}

/// One random instance: checks the permutation, seed determinism and the
/// score of two guessers against the recount.
pub fn check_instance(seed: u64, max_items: usize) -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let sources = sessions(&mut rng, max_items);
    let task_seed = rng.gen();
    let mut task = build_memory_task(&sources, task_seed).map_err(|e| e.to_string())?;
    let again = build_memory_task(&sources, task_seed).map_err(|e| e.to_string())?;
    if task != again {
        return Err(format!("seed {seed}: same seed gave a different order"));
    }
    let mut seen: Vec<&str> = task
        .items
        .iter()
        .map(|i| i.image.source_url.as_str())
        .collect();
    let mut expected: Vec<&str> = sources
        .iter()
        .flat_map(|s| s.images.iter().map(|(_, i)| i.source_url.as_str()))
        .collect();
    seen.sort();
    expected.sort();
    if seen != expected {
        return Err(format!(
            "seed {seed}: items are not a permutation of the sources"
        ));
    }
    for item in &task.items {
        let (owner, theme) = sources
            .iter()
            .find_map(|s| {
                s.images
                    .iter()
                    .find(|(_, i)| i == &item.image)
                    .map(|(p, _)| (*p, s.theme_id))
            })
            .unwrap();
        if (item.true_owner, item.true_theme) != (owner, theme) {
            return Err(format!("seed {seed}: wrong answer key"));
        }
    }
    let n = task.items.len();
    for guesser in [ParticipantId(1), ParticipantId(2)] {
        let order: Vec<usize> = {
            let mut v: Vec<usize> = (0..n).collect();
            v.reverse();
            v
        };
        for i in order {
            let guess = Guess {
                owner: ParticipantId(rng.gen_range(1..=6)),
                theme: ThemeId(rng.gen_range(1..=4)),
            };
            task.record_guess(guesser, i, guess)
                .map_err(|e| e.to_string())?;
        }
        let got = task.score(guesser).map_err(|e| e.to_string())?;
        let want = brute_force_score(&sources, &task, guesser);
        if got != want {
            return Err(format!("seed {seed}: score {got} but recount gives {want}"));
        }
    }
    Ok(n)
}
