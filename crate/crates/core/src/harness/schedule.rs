//! Per-second duty cycle: a locking window, then key rounds at the round
//! rate, each preceded by the gate settle time.

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondPlan {
    pub locking_ms: f64,
    pub qkd_ms: f64,
    pub idle_ms: f64,
    pub round_period_us: f64,
    pub settle_us: f64,
    pub rounds_per_second: u64,
}

impl SecondPlan {
    /// Start of round `k` within the second, in microseconds.
    pub fn round_start_us(&self, k: u64) -> f64 {
        self.locking_ms * 1000.0 + k as f64 * self.round_period_us
    }

    /// Time the source is triggered for round `k`, after the gates settle.
    pub fn trigger_us(&self, k: u64) -> f64 {
        self.round_start_us(k) + self.settle_us
    }

    pub fn triggers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.rounds_per_second).map(|k| self.trigger_us(k))
    }

    /// Whole rounds fitting in `duration_s` seconds of operation.
    pub fn rounds_in(&self, duration_s: f64) -> u64 {
        let whole = duration_s.floor() as u64;
        let frac = duration_s - whole as f64;
        let partial_qkd_ms = (frac * 1000.0 - self.locking_ms).clamp(0.0, self.qkd_ms);
        let partial = if self.round_period_us > 0.0 {
            ((partial_qkd_ms * 1000.0 / self.round_period_us) + 1e-9).floor() as u64
        } else {
            0
        };
        whole * self.rounds_per_second + partial.min(self.rounds_per_second)
    }

    /// Seconds of operation needed to send `rounds` rounds.
    pub fn duration_for(&self, rounds: u64) -> f64 {
        if self.rounds_per_second == 0 {
            return 0.0;
        }
        rounds as f64 / self.rounds_per_second as f64
    }
}

pub fn schedule(config: &RunConfig) -> Result<SecondPlan> {
    if config.round_rate_hz.is_nan() || config.round_rate_hz <= 0.0 {
        return Err(Error::config("round rate must be > 0"));
    }
    let period_us = 1e6 / config.round_rate_hz;
    if config.settle_us >= period_us {
        return Err(Error::config(format!(
            "settle time {} us does not fit in the {period_us} us round period",
            config.settle_us
        )));
    }
    if config.locking_window_ms < 0.0 || config.qkd_window_ms < 0.0 {
        return Err(Error::config("windows must be non-negative"));
    }
    let idle_ms = 1000.0 - config.locking_window_ms - config.qkd_window_ms;
    if idle_ms < -1e-9 {
        return Err(Error::config("locking and key windows exceed one second"));
    }
    // Round count by integer arithmetic on microseconds where possible.
    let rounds = ((config.qkd_window_ms * 1000.0 / period_us) + 1e-9).floor() as u64;
    Ok(SecondPlan {
        locking_ms: config.locking_window_ms,
        qkd_ms: config.qkd_window_ms,
        idle_ms: idle_ms.max(0.0),
        round_period_us: period_us,
        settle_us: config.settle_us,
        rounds_per_second: rounds,
    })
}
