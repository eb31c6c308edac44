use serde::{Deserialize, Serialize};

use super::SiftedRecord;

/// Sifted and erroneous bit counts for one delay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayTally {
    pub sifted: u64,
    pub errors: u64,
}

impl DelayTally {
    pub fn error_rate(&self) -> f64 {
        if self.sifted == 0 {
            0.0
        } else {
            self.errors as f64 / self.sifted as f64
        }
    }
}

/// Per-delay error bookkeeping for a session. Index `d` holds delay `d`;
/// index 0 is unused by key rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionLedger {
    pulses: u32,
    per_delay: Vec<DelayTally>,
    pub rounds_sent: u64,
    pub valid_detections: u64,
    pub sifted_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    /// `(d, tally)` for every `d` in `1..pulses`.
    pub per_delay: Vec<(u32, DelayTally)>,
    pub rounds_sent: u64,
    pub sifted_bits: u64,
    pub errors: u64,
    pub e_bit: f64,
    pub gain: f64,
}

impl SessionLedger {
    pub fn new(pulses: u32) -> Self {
        SessionLedger {
            pulses,
            per_delay: vec![DelayTally::default(); pulses as usize],
            rounds_sent: 0,
            valid_detections: 0,
            sifted_bits: 0,
        }
    }

    pub fn pulses(&self) -> u32 {
        self.pulses
    }

    pub fn record_round(&mut self) {
        self.rounds_sent += 1;
    }

    pub fn record_rounds(&mut self, n: u64) {
        self.rounds_sent += n;
    }

    /// Counts one valid detection and its sifted bit.
    pub fn update(&mut self, record: &SiftedRecord) {
        let tally = &mut self.per_delay[record.d as usize];
        tally.sifted += 1;
        if record.alice_bit != record.bob_bit {
            tally.errors += 1;
        }
        self.valid_detections += 1;
        self.sifted_bits += 1;
    }

    pub fn tally(&self, d: u32) -> DelayTally {
        self.per_delay[d as usize]
    }

    /// Adds the counts of a shard run over the same train length.
    pub fn merge(&mut self, other: &SessionLedger) {
        assert_eq!(self.pulses, other.pulses, "merging ledgers of different train length");
        for (a, b) in self.per_delay.iter_mut().zip(&other.per_delay) {
            a.sifted += b.sifted;
            a.errors += b.errors;
        }
        self.rounds_sent += other.rounds_sent;
        self.valid_detections += other.valid_detections;
        self.sifted_bits += other.sifted_bits;
    }

    pub fn report(&self) -> LedgerReport {
        let per_delay: Vec<(u32, DelayTally)> = (1..self.pulses)
            .map(|d| (d, self.per_delay[d as usize]))
            .collect();
        let errors: u64 = per_delay.iter().map(|(_, t)| t.errors).sum();
        let sifted: u64 = per_delay.iter().map(|(_, t)| t.sifted).sum();
        debug_assert_eq!(sifted, self.sifted_bits);
        LedgerReport {
            per_delay,
            rounds_sent: self.rounds_sent,
            sifted_bits: self.sifted_bits,
            errors,
            e_bit: if sifted == 0 {
                0.0
            } else {
                errors as f64 / sifted as f64
            },
            gain: if self.rounds_sent == 0 {
                0.0
            } else {
                self.valid_detections as f64 / self.rounds_sent as f64
            },
        }
    }
}
