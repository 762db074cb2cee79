//! Orchestration core for automated coimagination sessions: the turn
//! protocol, voice command grammar, topic image retrieval, round audio
//! storage, attempt metrics and the event log that ties them together.

pub mod audio;
pub mod clock;
pub mod coordinator;
pub mod domain;
pub mod eventlog;
pub mod grammar;
pub mod images;
pub mod metrics;

pub use clock::{Clock, SimulatedClock, SystemClock, Timestamp};
pub use coordinator::{Applied, Coordinator, CoordinatorError, CoordinatorOptions, SessionEvent};
