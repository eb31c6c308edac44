//! Protocol state machines: Alice's phase encoding, Bob's random delay and
//! gate word, detection interpretation, announcement and sifting.
//!
//! Alice and Bob share nothing but messages. [`Bob`] never sees a
//! [`PulseTrainRecord`]; he works from the click timeline alone and emits an
//! [`Announcement`], from which [`Alice`] computes her sifted bit.

pub mod codec;
mod ledger;

pub use ledger::{DelayTally, LedgerReport, SessionLedger};

use serde::{Deserialize, Serialize};

use crate::bits::BitSource;
use crate::error::{Error, Result};

/// Number of switchable delay gates in the interferometer.
pub const GATE_COUNT: u32 = 7;

/// Delay added per unit of the gate word (one pulse slot).
pub const SLOT_NS: u32 = 2;

/// Alice's phase bits for one round; bit `1` means phase π.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseTrainRecord {
    pub round_id: u64,
    pub phase_bits: Vec<u8>,
}

impl PulseTrainRecord {
    pub fn pulses(&self) -> usize {
        self.phase_bits.len()
    }
}

/// Bob's delay for one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayChoice {
    /// Direction bit; `1` means the backward shift.
    pub c: u8,
    /// Delay magnitude in pulse slots.
    pub d: u32,
    /// Signed delay `(-1)^c * d`.
    pub r_signed: i32,
    /// Gate word; bit `i - 1` set means gate `i` is in the path.
    pub gate_word: u32,
}

impl DelayChoice {
    pub fn new(c: u8, d: u32, pulses: u32) -> Result<Self> {
        if c > 1 {
            return Err(Error::domain(format!("direction bit must be 0 or 1, got {c}")));
        }
        if d == 0 || d >= pulses {
            return Err(Error::domain(format!(
                "delay must lie in [1, {}], got {d}",
                pulses.saturating_sub(1)
            )));
        }
        Ok(DelayChoice {
            c,
            d,
            r_signed: d as i32 * (1 - 2 * i32::from(c)),
            gate_word: d,
        })
    }
}

/// Bob's public message: which pair of pulses interfered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Announcement {
    pub round_id: u64,
    pub i: u16,
    pub j: u16,
}

impl Announcement {
    pub fn new(round_id: u64, i: u16, j: u16, pulses: u32) -> Result<Self> {
        if i == j {
            return Err(Error::Protocol(format!("announced pair repeats index {i}")));
        }
        if u32::from(i.max(j)) >= pulses {
            return Err(Error::Protocol(format!(
                "announced pair ({i}, {j}) exceeds train length {pulses}"
            )));
        }
        Ok(Announcement { round_id, i, j })
    }
}

/// One sifted key bit as seen by both parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedRecord {
    pub round_id: u64,
    pub i: u16,
    pub j: u16,
    pub alice_bit: u8,
    pub bob_bit: u8,
    pub d: u32,
}

/// A click that landed on an overlap slot, mapped back to its pulse pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub i: u32,
    pub j: u32,
    pub bob_bit: u8,
}

fn check_pulses(pulses: u32) -> Result<()> {
    if pulses < 2 || pulses > u32::from(u16::MAX) + 1 {
        return Err(Error::domain(format!("unsupported train length {pulses}")));
    }
    Ok(())
}

/// Draws `pulses` independent phase bits.
pub fn alice_encode<B: BitSource>(
    round_id: u64,
    pulses: u32,
    randomness: &mut B,
) -> Result<PulseTrainRecord> {
    check_pulses(pulses)?;
    if let Some(left) = randomness.remaining() {
        if left < pulses as usize {
            return Err(Error::RandomnessExhausted {
                needed: pulses as usize - left,
            });
        }
    }
    let phase_bits = (0..pulses)
        .map(|_| randomness.next_bit().map(u8::from))
        .collect::<Result<Vec<_>>>()?;
    Ok(PulseTrainRecord {
        round_id,
        phase_bits,
    })
}

/// Bits consumed per delay draw: `ceil(log2 pulses)`.
pub fn delay_word_bits(pulses: u32) -> u32 {
    32 - (pulses - 1).leading_zeros()
}

/// Uniform delay on `1..pulses` by rejection, then one direction bit.
pub fn bob_choose_delay<B: BitSource>(pulses: u32, randomness: &mut B) -> Result<DelayChoice> {
    check_pulses(pulses)?;
    let width = delay_word_bits(pulses);
    let d = loop {
        let word = randomness.take_word(width)?;
        if word >= 1 && word < u64::from(pulses) {
            break word as u32;
        }
    };
    let c = u8::from(randomness.next_bit()?);
    DelayChoice::new(c, d, pulses)
}

/// Delay contributed by gate `index` (1-based) when switched in.
pub fn gate_step_ns(index: u32) -> u32 {
    (1 << (index - 1)) * SLOT_NS
}

/// Total delay of a 7-bit gate word.
pub fn gate_delay_ns(gate_word: u32) -> Result<u32> {
    if gate_word >= 1 << GATE_COUNT {
        return Err(Error::domain(format!(
            "gate word {gate_word} exceeds {GATE_COUNT} bits"
        )));
    }
    Ok((1..=GATE_COUNT)
        .filter(|&i| gate_word & (1 << (i - 1)) != 0)
        .map(gate_step_ns)
        .sum())
}

/// Maps an output-slot click back to the interfering pulse pair.
///
/// Slot `t` carries pulse `t` through the short arm and pulse `t - d` through
/// the long arm; only slots where both exist are valid.
pub fn interpret_detection(
    click_slot: u32,
    detector: u8,
    choice: &DelayChoice,
    pulses: u32,
) -> Result<Option<Detection>> {
    if detector > 1 {
        return Err(Error::domain(format!("detector id must be 0 or 1, got {detector}")));
    }
    let last = pulses - 1 + choice.d;
    if click_slot > last {
        return Err(Error::domain(format!(
            "click slot {click_slot} outside output timeline [0, {last}]"
        )));
    }
    if click_slot < choice.d || click_slot >= pulses {
        return Ok(None);
    }
    Ok(Some(Detection {
        i: click_slot - choice.d,
        j: click_slot,
        bob_bit: detector,
    }))
}

/// Alice's sifted bit `s_i XOR s_j`.
pub fn sift(record: &PulseTrainRecord, announcement: &Announcement) -> Result<u8> {
    if record.round_id != announcement.round_id {
        return Err(Error::Protocol(format!(
            "announcement for round {} applied to round {}",
            announcement.round_id, record.round_id
        )));
    }
    let bit = |k: u16| {
        record
            .phase_bits
            .get(usize::from(k))
            .copied()
            .ok_or_else(|| Error::Protocol(format!("index {k} outside round {}", record.round_id)))
    };
    if announcement.i == announcement.j {
        return Err(Error::Protocol("announced pair repeats an index".into()));
    }
    Ok(bit(announcement.i)? ^ bit(announcement.j)?)
}

/// Sender state: one outstanding pulse train at a time.
#[derive(Debug)]
pub struct Alice<B> {
    pulses: u32,
    randomness: B,
    next_round: u64,
    current: Option<PulseTrainRecord>,
}

impl<B: BitSource> Alice<B> {
    pub fn new(pulses: u32, randomness: B) -> Self {
        Self::starting_at(pulses, randomness, 0)
    }

    pub fn starting_at(pulses: u32, randomness: B, first_round: u64) -> Self {
        Alice {
            pulses,
            randomness,
            next_round: first_round,
            current: None,
        }
    }

    pub fn prepare(&mut self) -> Result<&PulseTrainRecord> {
        let record = alice_encode(self.next_round, self.pulses, &mut self.randomness)?;
        self.next_round += 1;
        Ok(self.current.insert(record))
    }

    pub fn current(&self) -> Option<&PulseTrainRecord> {
        self.current.as_ref()
    }

    pub fn receive(&self, announcement: &Announcement) -> Result<u8> {
        let record = self
            .current
            .as_ref()
            .ok_or_else(|| Error::Protocol("announcement before any train was sent".into()))?;
        sift(record, announcement)
    }
}

/// Receiver state: picks a delay per round and turns a click into an announcement.
#[derive(Debug)]
pub struct Bob<B> {
    pulses: u32,
    randomness: B,
}

impl<B: BitSource> Bob<B> {
    pub fn new(pulses: u32, randomness: B) -> Self {
        Bob { pulses, randomness }
    }

    pub fn choose_delay(&mut self) -> Result<DelayChoice> {
        bob_choose_delay(self.pulses, &mut self.randomness)
    }

    /// Announces the pair in the orientation set by the direction bit, so that
    /// `j = i + r'` holds.
    pub fn announce(
        &self,
        round_id: u64,
        choice: &DelayChoice,
        detection: &Detection,
    ) -> Result<Announcement> {
        let (i, j) = if choice.c == 0 {
            (detection.i, detection.j)
        } else {
            (detection.j, detection.i)
        };
        Announcement::new(round_id, i as u16, j as u16, self.pulses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::{FixedBits, RngBits};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bits(s: &str) -> FixedBits {
        FixedBits::from_str_bits(s).unwrap()
    }

    #[test]
    fn encode_maps_bits_directly() {
        let rec = alice_encode(0, 4, &mut bits("1011 0")).unwrap();
        assert_eq!(rec.phase_bits, vec![1, 0, 1, 1]);
    }

    #[test]
    fn encode_is_deterministic_per_seed() {
        let run = || {
            let mut src = RngBits::new(ChaCha8Rng::seed_from_u64(42));
            alice_encode(3, 128, &mut src).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn encode_refuses_short_stream() {
        let mut src = bits("101");
        assert!(matches!(
            alice_encode(0, 4, &mut src),
            Err(Error::RandomnessExhausted { needed: 1 })
        ));
        assert_eq!(src.remaining(), Some(3));
    }

    #[test]
    fn encoded_bits_are_fair() {
        let trains = 100_000;
        let pulses = 16;
        let mut src = RngBits::new(ChaCha8Rng::seed_from_u64(7));
        let mut ones = vec![0u64; pulses];
        for r in 0..trains {
            let rec = alice_encode(r, pulses as u32, &mut src).unwrap();
            for (acc, b) in ones.iter_mut().zip(&rec.phase_bits) {
                *acc += u64::from(*b);
            }
        }
        let sigma = (0.25 / trains as f64).sqrt();
        for count in ones {
            let mean = count as f64 / trains as f64;
            assert!((mean - 0.5).abs() < 5.0 * sigma, "{mean}");
        }
    }

    #[test]
    fn delay_word_examples() {
        let one = bob_choose_delay(128, &mut bits("0000001 0")).unwrap();
        assert_eq!((one.d, one.gate_word, one.c, one.r_signed), (1, 1, 0, 1));
        assert_eq!(gate_delay_ns(one.gate_word).unwrap(), 2);

        let max = bob_choose_delay(128, &mut bits("1111111 1")).unwrap();
        assert_eq!((max.d, max.gate_word, max.r_signed), (127, 0b111_1111, -127));
        assert_eq!(gate_delay_ns(max.gate_word).unwrap(), 254);

        let mut src = bits("0000000 0000101 0");
        let retry = bob_choose_delay(128, &mut src).unwrap();
        assert_eq!(retry.d, 5);
        assert_eq!(src.remaining(), Some(0));
    }

    #[test]
    fn delay_rejects_out_of_range_words_for_odd_lengths() {
        // L = 5 uses 3 bits; words 0, 5, 6, 7 are rejected.
        let choice = bob_choose_delay(5, &mut bits("000 101 110 111 011 1")).unwrap();
        assert_eq!(choice.d, 3);
        assert_eq!(choice.c, 1);
    }

    #[test]
    fn delay_exhaustion_is_an_error() {
        assert!(matches!(
            bob_choose_delay(128, &mut bits("0000000 000")),
            Err(Error::RandomnessExhausted { .. })
        ));
        assert!(matches!(
            bob_choose_delay(128, &mut bits("0000011")),
            Err(Error::RandomnessExhausted { .. })
        ));
    }

    #[test]
    fn delays_are_uniform() {
        let pulses = 16u32;
        let draws = 150_000;
        let mut src = RngBits::new(ChaCha8Rng::seed_from_u64(11));
        let mut counts = vec![0u64; pulses as usize];
        let mut backward = 0u64;
        for _ in 0..draws {
            let c = bob_choose_delay(pulses, &mut src).unwrap();
            counts[c.d as usize] += 1;
            backward += u64::from(c.c);
            assert_eq!(gate_delay_ns(c.gate_word).unwrap(), SLOT_NS * c.d);
        }
        assert_eq!(counts[0], 0);
        let p = 1.0 / f64::from(pulses - 1);
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for &n in &counts[1..] {
            assert!((n as f64 - draws as f64 * p).abs() < 5.0 * sigma);
        }
        let half_sigma = (draws as f64 * 0.25).sqrt();
        assert!((backward as f64 - draws as f64 / 2.0).abs() < 5.0 * half_sigma);
    }

    #[test]
    fn gate_words() {
        assert_eq!(gate_delay_ns(0).unwrap(), 0);
        assert_eq!(gate_delay_ns(127).unwrap(), 254);
        assert!(gate_delay_ns(128).is_err());
        let mut seen: Vec<u32> = (0..128).map(|w| gate_delay_ns(w).unwrap()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, (0..128).map(|k| 2 * k).collect::<Vec<_>>());
        assert_eq!(gate_step_ns(1), 2);
        assert_eq!(gate_step_ns(7), 128);
    }

    #[test]
    fn detection_examples() {
        let pulses = 16;
        for d in 1..pulses {
            let choice = DelayChoice::new(0, d, pulses).unwrap();
            assert_eq!(
                interpret_detection(d, 1, &choice, pulses).unwrap(),
                Some(Detection { i: 0, j: d, bob_bit: 1 })
            );
            assert_eq!(interpret_detection(0, 0, &choice, pulses).unwrap(), None);
            assert_eq!(
                interpret_detection(pulses - 1 + d, 0, &choice, pulses).unwrap(),
                None
            );
            assert!(interpret_detection(pulses + d, 0, &choice, pulses).is_err());
        }
    }

    #[test]
    fn overlap_slot_count_by_enumeration() {
        let pulses = 8u32;
        for d in 1..pulses {
            let choice = DelayChoice::new(0, d, pulses).unwrap();
            let valid: Vec<Detection> = (0..pulses + d)
                .filter_map(|t| interpret_detection(t, 0, &choice, pulses).unwrap())
                .collect();
            assert_eq!(valid.len() as u32, pulses - d);
            for det in valid {
                assert_eq!(det.j - det.i, d);
                assert!(det.j < pulses);
            }
        }
    }

    #[test]
    fn sift_examples() {
        let rec = PulseTrainRecord {
            round_id: 5,
            phase_bits: vec![0, 1, 1, 0],
        };
        let ann = Announcement::new(5, 0, 2, 4).unwrap();
        assert_eq!(sift(&rec, &ann).unwrap(), 1);
        assert!(Announcement::new(5, 2, 2, 4).is_err());
        assert!(Announcement::new(5, 1, 4, 4).is_err());
        let other = Announcement::new(6, 0, 2, 4).unwrap();
        assert!(matches!(sift(&rec, &other), Err(Error::Protocol(_))));
    }

    #[test]
    fn sifted_bits_are_fair() {
        let mut src = RngBits::new(ChaCha8Rng::seed_from_u64(3));
        let trials = 100_000u64;
        let mut ones = 0u64;
        for r in 0..trials {
            let rec = alice_encode(r, 8, &mut src).unwrap();
            let ann = Announcement::new(r, (r % 4) as u16, (r % 4 + 3) as u16, 8).unwrap();
            ones += u64::from(sift(&rec, &ann).unwrap());
        }
        let sigma = (trials as f64 * 0.25).sqrt();
        assert!((ones as f64 - trials as f64 / 2.0).abs() < 5.0 * sigma);
    }

    #[test]
    fn announcement_orientation_follows_direction() {
        let pulses = 16;
        let bob = Bob::new(pulses, bits(""));
        let det = Detection { i: 2, j: 7, bob_bit: 0 };
        let fwd = DelayChoice::new(0, 5, pulses).unwrap();
        let back = DelayChoice::new(1, 5, pulses).unwrap();
        let a = bob.announce(1, &fwd, &det).unwrap();
        let b = bob.announce(1, &back, &det).unwrap();
        assert_eq!((a.i, a.j), (2, 7));
        assert_eq!((b.i, b.j), (7, 2));
        for (ann, choice) in [(a, fwd), (b, back)] {
            let j = (i64::from(ann.i) + i64::from(choice.r_signed)).rem_euclid(16);
            assert_eq!(j, i64::from(ann.j));
        }
    }

    #[test]
    fn parties_agree_without_noise() {
        let pulses = 8;
        let mut alice = Alice::new(pulses, RngBits::new(ChaCha8Rng::seed_from_u64(1)));
        let mut bob = Bob::new(pulses, RngBits::new(ChaCha8Rng::seed_from_u64(2)));
        for _ in 0..1000 {
            let rec = alice.prepare().unwrap().clone();
            let choice = bob.choose_delay().unwrap();
            let t = choice.d;
            // Ideal interferometer: detector 0 fires on equal phases.
            let detector = rec.phase_bits[(t - choice.d) as usize] ^ rec.phase_bits[t as usize];
            let det = interpret_detection(t, detector, &choice, pulses)
                .unwrap()
                .unwrap();
            let ann = bob.announce(rec.round_id, &choice, &det).unwrap();
            assert_eq!(alice.receive(&ann).unwrap(), det.bob_bit);
        }
    }
}
