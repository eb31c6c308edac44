//! Round-robin differential-phase-shift QKD: security analysis, protocol
//! state machines, photonic channel simulation, interferometer phase locking
//! and a session harness that ties them together.

pub mod bits;
pub mod error;
pub mod harness;
pub mod phase_lock;
pub mod photonics;
pub mod protocol;
pub mod security;

pub use error::{Error, Result};
pub use harness::{Mode, RunConfig, SessionReport};
pub use photonics::{ChannelModel, PerDelay};
pub use protocol::{Announcement, DelayChoice, PulseTrainRecord, SiftedRecord};
pub use security::{key_rate, RateBreakdown, SecurityParams};
