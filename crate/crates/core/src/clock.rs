//! Time sources. Every timer decision in the session state machine is made
//! against a [`Timestamp`] handed in by the caller, so the same protocol runs
//! under wall-clock time in production and under a [`SimulatedClock`] in
//! tests and rehearsals.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Milliseconds on the clock's own axis.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_secs(secs: u64) -> Self {
        Timestamp(secs * 1000)
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn plus_secs(self, secs: u32) -> Self {
        Timestamp(self.0 + u64::from(secs) * 1000)
    }

    /// Whole milliseconds from `earlier` to `self`, zero if `earlier` is later.
    pub fn since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}s", self.0 / 1000, self.0 % 1000)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Wall clock anchored at Unix time on construction and advanced by a
/// monotonic [`Instant`], so readings never go backwards.
#[derive(Debug, Clone)]
pub struct SystemClock {
    anchor_ms: u64,
    started: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        let anchor_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        SystemClock {
            anchor_ms,
            started: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.anchor_ms + self.started.elapsed().as_millis() as u64)
    }
}

/// Manually advanced clock. Clones share the same reading.
#[derive(Debug, Clone, Default)]
pub struct SimulatedClock {
    millis: Arc<AtomicU64>,
}

impl SimulatedClock {
    pub fn new(start: Timestamp) -> Self {
        SimulatedClock {
            millis: Arc::new(AtomicU64::new(start.0)),
        }
    }

    pub fn advance_millis(&self, ms: u64) -> Timestamp {
        Timestamp(self.millis.fetch_add(ms, Ordering::AcqRel) + ms)
    }

    pub fn advance_secs(&self, secs: u64) -> Timestamp {
        self.advance_millis(secs * 1000)
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.millis.load(Ordering::Acquire))
    }
}
