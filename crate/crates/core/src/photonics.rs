//! Photon-statistics model of the physical layer.
//!
//! Coherent pulses are reduced to a mean photon number and an optical phase
//! per slot, which is exact for the click statistics of threshold detectors.
//! Bob's interferometer splits the train, delays one copy by `d` slots and
//! recombines; output slot `t` mixes pulse `t` (short arm) with pulse `t - d`
//! (long arm). Slots where only one arm contributes still produce light and
//! clicks, they just carry no key information.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::PulseTrainRecord;

/// Duration of one pulse slot.
pub const SLOT_DURATION_S: f64 = 2e-9;

/// Mean photon number and phase of each slot of a train.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalTrain {
    pub means: Vec<f64>,
    pub phases: Vec<f64>,
}

impl OpticalTrain {
    pub fn pulses(&self) -> usize {
        self.means.len()
    }

    pub fn total_mean(&self) -> f64 {
        self.means.iter().sum()
    }
}

/// A quantity that is either shared by all delays or tabulated per delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerDelay {
    Uniform(f64),
    /// Indexed by delay `d`; entry 0 is the zero-delay path.
    Table(Vec<f64>),
}

impl PerDelay {
    pub fn get(&self, d: u32) -> f64 {
        match self {
            PerDelay::Uniform(v) => *v,
            PerDelay::Table(t) => t.get(d as usize).copied().unwrap_or(f64::NAN),
        }
    }

    pub fn values(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            PerDelay::Uniform(v) => Box::new(std::iter::once(*v)),
            PerDelay::Table(t) => Box::new(t.iter().copied()),
        }
    }
}

impl Default for PerDelay {
    fn default() -> Self {
        PerDelay::Uniform(0.0)
    }
}

/// Channel, interferometer and detector parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Total loss including detection, in dB.
    pub total_loss_db: f64,
    /// Unitemised extra loss (insertion, coupling, gating), in dB.
    pub excess_loss_db: f64,
    /// Detector efficiency on top of the loss figures. Leave at 1 when the
    /// loss already includes detection.
    pub efficiency: f64,
    pub dark_rate_cps: f64,
    pub slot_duration_s: f64,
    /// Fraction of each slot during which the detector is gated on.
    pub gate_fraction: f64,
    pub visibility: PerDelay,
    /// Residual interferometer phase per delay, radians.
    pub phase_offset: PerDelay,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            total_loss_db: 0.0,
            excess_loss_db: 0.0,
            efficiency: 1.0,
            dark_rate_cps: 0.0,
            slot_duration_s: SLOT_DURATION_S,
            gate_fraction: 1.0,
            visibility: PerDelay::Uniform(1.0),
            phase_offset: PerDelay::Uniform(0.0),
        }
    }
}

impl ChannelModel {
    pub fn transmittance(&self) -> f64 {
        10f64.powf(-(self.total_loss_db + self.excess_loss_db) / 10.0)
    }

    /// Dark-count mean per detector per slot.
    pub fn dark_mean_per_slot(&self) -> f64 {
        self.dark_rate_cps * self.slot_duration_s * self.gate_fraction
    }

    pub fn detector(&self) -> DetectorModel {
        DetectorModel {
            efficiency: self.efficiency,
            dark_rate_cps: self.dark_rate_cps,
            slot_duration_s: self.slot_duration_s,
            gate_fraction: self.gate_fraction,
        }
    }

    pub fn validate(&self, pulses: u32) -> Result<()> {
        if !(self.total_loss_db >= 0.0 && self.excess_loss_db >= 0.0) {
            return Err(Error::domain("loss figures must be >= 0 dB"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::domain(format!(
                "detector efficiency must lie in (0, 1], got {}",
                self.efficiency
            )));
        }
        if !(self.dark_rate_cps >= 0.0 && self.slot_duration_s > 0.0) {
            return Err(Error::domain("dark rate and slot duration must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.gate_fraction) {
            return Err(Error::domain("gate fraction must lie in [0, 1]"));
        }
        if let PerDelay::Table(t) = &self.visibility {
            if t.len() < pulses as usize {
                return Err(Error::domain(format!(
                    "visibility table has {} entries, need {pulses}",
                    t.len()
                )));
            }
        }
        if let PerDelay::Table(t) = &self.phase_offset {
            if t.len() < pulses as usize {
                return Err(Error::domain(format!(
                    "phase offset table has {} entries, need {pulses}",
                    t.len()
                )));
            }
        }
        if self.visibility.values().any(|v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::domain("visibility must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate_cps: f64,
    pub slot_duration_s: f64,
    pub gate_fraction: f64,
}

impl DetectorModel {
    pub fn dark_mean_per_slot(&self) -> f64 {
        self.dark_rate_cps * self.slot_duration_s * self.gate_fraction
    }
}

/// Mean photon numbers arriving at the two detectors, one entry per output slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorMeans {
    pub d0: Vec<f64>,
    pub d1: Vec<f64>,
}

impl DetectorMeans {
    pub fn total(&self) -> f64 {
        self.d0.iter().sum::<f64>() + self.d1.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Click {
    pub slot: u32,
    pub detector: u8,
}

/// Detector clicks of one round, on the interferometer output timeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub round_id: u64,
    pub d: u32,
    pub clicks: Vec<Click>,
}

/// Attenuated train with every slot at `mu / L` and phase `pi * s_i`.
pub fn build_train(record: &PulseTrainRecord, mu: f64) -> Result<OpticalTrain> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::domain(format!("train mean must be > 0, got {mu}")));
    }
    let pulses = record.pulses();
    let per_slot = mu / pulses as f64;
    Ok(OpticalTrain {
        means: vec![per_slot; pulses],
        phases: record
            .phase_bits
            .iter()
            .map(|&b| f64::from(b) * std::f64::consts::PI)
            .collect(),
    })
}

pub fn apply_loss(train: &OpticalTrain, transmittance: f64) -> Result<OpticalTrain> {
    if !(transmittance > 0.0 && transmittance <= 1.0) {
        return Err(Error::domain(format!(
            "transmittance must lie in (0, 1], got {transmittance}"
        )));
    }
    Ok(OpticalTrain {
        means: train.means.iter().map(|m| m * transmittance).collect(),
        phases: train.phases.clone(),
    })
}

/// Detector means for an overlap slot mixing pulses with means `m_a`, `m_b`
/// and optical phase difference `phase`. Returns `(D0, D1)`.
pub fn interference_means(m_a: f64, m_b: f64, visibility: f64, phase: f64) -> (f64, f64) {
    let sum = m_a + m_b;
    if sum <= 0.0 {
        return (0.0, 0.0);
    }
    let m = sum / 2.0;
    let contrast = visibility * 2.0 * (m_a * m_b).sqrt() / sum;
    let fringe = contrast * phase.cos();
    (m / 2.0 * (1.0 + fringe), m / 2.0 * (1.0 - fringe))
}

/// Output intensities of the delay-`d` interferometer with visibility `v` and
/// residual phase `delta`. Detector 0 is the constructive port at zero phase.
pub fn interferometer_output(
    train: &OpticalTrain,
    d: u32,
    visibility: f64,
    delta: f64,
) -> Result<DetectorMeans> {
    let pulses = train.pulses();
    let d = d as usize;
    if d >= pulses {
        return Err(Error::domain(format!(
            "delay {d} outside [0, {}]",
            pulses.saturating_sub(1)
        )));
    }
    let len = pulses + d;
    let mut d0 = vec![0.0; len];
    let mut d1 = vec![0.0; len];
    for t in 0..len {
        let short = (t < pulses).then_some(t);
        let long = t.checked_sub(d).filter(|&b| b < pulses);
        match (short, long) {
            (Some(a), Some(b)) => {
                let phase = train.phases[a] - train.phases[b] + delta;
                let (p0, p1) = interference_means(train.means[a], train.means[b], visibility, phase);
                d0[t] = p0;
                d1[t] = p1;
            }
            (Some(k), None) | (None, Some(k)) => {
                d0[t] = train.means[k] / 4.0;
                d1[t] = train.means[k] / 4.0;
            }
            (None, None) => unreachable!("slot {t} has no contributing pulse"),
        }
    }
    Ok(DetectorMeans { d0, d1 })
}

/// Threshold-detector clicks: a slot clicks when a Poisson draw with mean
/// `eta * m + dark` is non-zero.
pub fn sample_clicks<R: Rng + ?Sized>(
    round_id: u64,
    d: u32,
    means: &DetectorMeans,
    detector: &DetectorModel,
    rng: &mut R,
) -> ClickRecord {
    let dark = detector.dark_mean_per_slot();
    let mut clicks = Vec::new();
    for (t, (&m0, &m1)) in means.d0.iter().zip(&means.d1).enumerate() {
        for (id, m) in [(0u8, m0), (1u8, m1)] {
            let lambda = detector.efficiency * m + dark;
            if lambda > 0.0 && rng.random::<f64>() < -(-lambda).exp_m1() {
                clicks.push(Click {
                    slot: t as u32,
                    detector: id,
                });
            }
        }
    }
    ClickRecord {
        round_id,
        d,
        clicks,
    }
}

/// Earliest click on an overlap slot; a double click picks a detector at random.
pub fn extract_valid<R: Rng + ?Sized>(
    clicks: &ClickRecord,
    d: u32,
    pulses: u32,
    rng: &mut R,
) -> Option<Click> {
    let first = clicks
        .clicks
        .iter()
        .filter(|c| c.slot >= d && c.slot < pulses)
        .map(|c| c.slot)
        .min()?;
    let mut at_slot = clicks.clicks.iter().filter(|c| c.slot == first);
    let a = *at_slot.next()?;
    match at_slot.find(|c| c.detector != a.detector) {
        Some(b) => Some(if rng.random::<bool>() { a } else { *b }),
        None => Some(a),
    }
}

/// Closed-form gain and error rate for one delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayExpectation {
    /// Probability of a valid detection in a round using this delay.
    pub gain: f64,
    /// Error probability of that detection.
    pub e_bit: f64,
}

/// Expected gain and error for delay `d` by direct probability accounting.
///
/// Every overlap slot has the same total click mean, and the phase
/// differences of distinct overlap pairs are independent fair bits, so the
/// earliest valid click carries the single-slot error probability.
pub fn delay_expectation(pulses: u32, mu: f64, channel: &ChannelModel, d: u32) -> DelayExpectation {
    let m = mu / f64::from(pulses) * channel.transmittance() * channel.efficiency;
    let dark = channel.dark_mean_per_slot();
    let fringe = channel.visibility.get(d) * channel.phase_offset.get(d).cos();
    let right = m / 2.0 * (1.0 + fringe) + dark;
    let wrong = m / 2.0 * (1.0 - fringe) + dark;
    let slot_click = -(-(right + wrong)).exp_m1();
    let overlap = f64::from(pulses - d);
    let gain = -(-(right + wrong) * overlap).exp_m1();
    let p_wrong = -(-wrong).exp_m1();
    let p_right = -(-right).exp_m1();
    let e_bit = if slot_click > 0.0 {
        (p_wrong * (1.0 - p_right) + 0.5 * p_wrong * p_right) / slot_click
    } else {
        0.0
    };
    DelayExpectation { gain, e_bit }
}

/// Expected `(Q, e_bit)` with the delay uniform on `1..pulses`.
pub fn analytic_gain_and_error(pulses: u32, mu: f64, channel: &ChannelModel) -> Result<(f64, f64)> {
    if pulses < 2 {
        return Err(Error::domain(format!("train length must be >= 2, got {pulses}")));
    }
    if mu.is_nan() || mu <= 0.0 {
        return Err(Error::domain(format!("train mean must be > 0, got {mu}")));
    }
    channel.validate(pulses)?;
    let mut gain = 0.0;
    let mut errors = 0.0;
    for d in 1..pulses {
        let e = delay_expectation(pulses, mu, channel, d);
        gain += e.gain;
        errors += e.gain * e.e_bit;
    }
    let e_bit = if gain > 0.0 { errors / gain } else { 0.0 };
    Ok((gain / f64::from(pulses - 1), e_bit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::RngBits;
    use crate::protocol::{alice_encode, interpret_detection, DelayChoice};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn record(bits: &[u8]) -> PulseTrainRecord {
        PulseTrainRecord {
            round_id: 0,
            phase_bits: bits.to_vec(),
        }
    }

    #[test]
    fn train_examples() {
        let rec = record(&[0; 128]);
        let train = build_train(&rec, 0.8).unwrap();
        assert!(train.means.iter().all(|&m| (m - 0.00625).abs() < 1e-15));
        let train = build_train(&record(&[0, 1]), 1.0).unwrap();
        assert_eq!(train.means, vec![0.5, 0.5]);
        assert_eq!(train.phases, vec![0.0, PI]);
        assert!(build_train(&rec, 0.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let train = build_train(&record(&[0; 128]), 0.8).unwrap();
        let t = 10f64.powf(-1.8);
        let lossy = apply_loss(&train, t).unwrap();
        // 0.00625 * 10^-1.8 = 9.9056e-5
        assert!((lossy.means[0] - 9.9056e-5).abs() < 1e-9);
        assert_eq!(apply_loss(&train, 1.0).unwrap(), train);
        let twice = apply_loss(&apply_loss(&train, 0.3).unwrap(), 0.5).unwrap();
        let once = apply_loss(&train, 0.15).unwrap();
        for (a, b) in twice.means.iter().zip(&once.means) {
            assert!((a - b).abs() < 1e-18);
        }
        assert!(apply_loss(&train, 0.0).is_err());
        assert!(apply_loss(&train, 1.01).is_err());
    }

    #[test]
    fn channel_transmittance_combines_losses() {
        let ch = ChannelModel {
            total_loss_db: 18.0,
            excess_loss_db: 3.0,
            ..ChannelModel::default()
        };
        assert!((ch.transmittance() - 10f64.powf(-2.1)).abs() < 1e-15);
        let dark = ChannelModel {
            dark_rate_cps: 200.0,
            ..ChannelModel::default()
        };
        assert!((dark.dark_mean_per_slot() - 4e-7).abs() < 1e-20);
    }

    #[test]
    fn interference_examples() {
        let same = build_train(&record(&[0, 0]), 2.0).unwrap();
        let out = interferometer_output(&same, 1, 1.0, 0.0).unwrap();
        let m = 1.0;
        assert!((out.d0[1] - m).abs() < 1e-15);
        assert!(out.d1[1].abs() < 1e-15);

        let flip = build_train(&record(&[0, 1]), 2.0).unwrap();
        let out = interferometer_output(&flip, 1, 1.0, 0.0).unwrap();
        assert!(out.d0[1].abs() < 1e-15);
        assert!((out.d1[1] - m).abs() < 1e-15);
        // Edge slots see a quarter of one pulse on each detector.
        assert_eq!((out.d0[0], out.d1[0], out.d0[2], out.d1[2]), (0.25, 0.25, 0.25, 0.25));

        assert!(interferometer_output(&flip, 2, 1.0, 0.0).is_err());
    }

    #[test]
    fn unequal_means_scale_contrast() {
        let (a, b) = interference_means(1.0, 1.0, 1.0, 0.0);
        assert_eq!((a, b), (1.0, 0.0));
        let (a, b) = interference_means(0.9, 0.1, 1.0, 0.0);
        assert!((a + b - 0.5).abs() < 1e-15);
        // 2 sqrt(0.09) / 1.0 = 0.6
        assert!((a - 0.25 * 1.6).abs() < 1e-15);
    }

    #[test]
    fn interferometer_conserves_photons() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bits = RngBits::new(ChaCha8Rng::seed_from_u64(6));
        for _ in 0..1000 {
            let rec = alice_encode(0, 8, &mut bits).unwrap();
            let mut train = build_train(&rec, rng.random_range(0.01..5.0)).unwrap();
            for m in train.means.iter_mut() {
                *m *= rng.random_range(0.1..1.0);
            }
            let input = train.total_mean();
            let v = rng.random_range(0.0..=1.0);
            let delta = rng.random_range(-PI..PI);
            for d in 0..8 {
                let out = interferometer_output(&train, d, v, delta).unwrap();
                assert_eq!(out.d0.len(), 8 + d as usize);
                assert!((out.total() - input).abs() < 1e-12 * input);
            }
        }
    }

    #[test]
    fn no_light_no_clicks() {
        let means = DetectorMeans {
            d0: vec![0.0; 20],
            d1: vec![0.0; 20],
        };
        let det = ChannelModel::default().detector();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_clicks(0, 4, &means, &det, &mut rng).clicks.is_empty());
    }

    #[test]
    fn click_probability_matches_threshold_identity() {
        let m = 0.3;
        let eta = 0.5;
        let det = DetectorModel {
            efficiency: eta,
            dark_rate_cps: 0.0,
            slot_duration_s: SLOT_DURATION_S,
            gate_fraction: 1.0,
        };
        let means = DetectorMeans {
            d0: vec![m; 1000],
            d1: vec![0.0; 1000],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut clicks = 0u64;
        let samples = 1_000_000u64;
        for _ in 0..samples / 1000 {
            clicks += sample_clicks(0, 1, &means, &det, &mut rng).clicks.len() as u64;
        }
        let p = 1.0 - (-eta * m).exp();
        let sigma = (samples as f64 * p * (1.0 - p)).sqrt();
        assert!((clicks as f64 - samples as f64 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn clicks_are_seed_deterministic() {
        let means = DetectorMeans {
            d0: vec![0.2; 50],
            d1: vec![0.1; 50],
        };
        let det = ChannelModel {
            dark_rate_cps: 1e6,
            ..ChannelModel::default()
        }
        .detector();
        let run = |seed| sample_clicks(3, 2, &means, &det, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn extract_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = 3;
        let rec = |slots: &[u32]| ClickRecord {
            round_id: 0,
            d,
            clicks: slots.iter().map(|&slot| Click { slot, detector: 1 }).collect(),
        };
        assert_eq!(extract_valid(&rec(&[0, d]), d, 8, &mut rng).unwrap().slot, d);
        assert_eq!(extract_valid(&rec(&[]), d, 8, &mut rng), None);
        assert_eq!(extract_valid(&rec(&[d + 1, d]), d, 8, &mut rng).unwrap().slot, d);
        assert_eq!(extract_valid(&rec(&[0, 1, 8, 10]), d, 8, &mut rng), None);
    }

    #[test]
    fn double_click_tie_is_fair() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rec = ClickRecord {
            round_id: 0,
            d: 1,
            clicks: vec![Click { slot: 2, detector: 0 }, Click { slot: 2, detector: 1 }],
        };
        let n = 100_000;
        let ones: u32 = (0..n)
            .map(|_| u32::from(extract_valid(&rec, 1, 4, &mut rng).unwrap().detector))
            .sum();
        let sigma = (f64::from(n) * 0.25).sqrt();
        assert!((f64::from(ones) - f64::from(n) / 2.0).abs() < 5.0 * sigma);
    }

    #[test]
    fn extract_never_returns_edge_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pulses = 8u32;
        for d in 1..pulses {
            let choice = DelayChoice::new(0, d, pulses).unwrap();
            for slot in 0..pulses + d {
                for detector in 0..2 {
                    let rec = ClickRecord {
                        round_id: 0,
                        d,
                        clicks: vec![Click { slot, detector }],
                    };
                    let picked = extract_valid(&rec, d, pulses, &mut rng);
                    let interpreted = interpret_detection(slot, detector, &choice, pulses).unwrap();
                    assert_eq!(picked.is_some(), interpreted.is_some());
                }
            }
        }
    }

    #[test]
    fn analytic_examples() {
        let perfect = ChannelModel {
            total_loss_db: 12.0,
            ..ChannelModel::default()
        };
        let (q, e) = analytic_gain_and_error(128, 0.8, &perfect).unwrap();
        assert_eq!(e, 0.0);
        assert!(q > 0.0);

        // Weak-signal limit of the visibility identity: bias is O(eta * m).
        let faded = ChannelModel {
            total_loss_db: 30.0,
            visibility: PerDelay::Uniform(0.8),
            ..ChannelModel::default()
        };
        let (_, e) = analytic_gain_and_error(16, 0.8, &faded).unwrap();
        assert!((e - 0.10).abs() < 1e-4, "{e}");
    }

    #[test]
    fn analytic_error_follows_cosine_law() {
        for (v, delta) in [(1.0, 0.3), (0.9, 1.0), (0.96, -0.2), (0.5, 2.5)] {
            let ch = ChannelModel {
                total_loss_db: 40.0,
                visibility: PerDelay::Uniform(v),
                phase_offset: PerDelay::Uniform(delta),
                ..ChannelModel::default()
            };
            let (_, e) = analytic_gain_and_error(4, 0.8, &ch).unwrap();
            let ideal = (1.0 - v * f64::cos(delta)) / 2.0;
            assert!((e - ideal).abs() < 1e-4, "{v} {delta}: {e} vs {ideal}");
        }
    }

    #[test]
    fn analytic_gain_matches_small_signal_estimate() {
        // Without saturation each overlap slot contributes its mean photon number.
        let ch = ChannelModel {
            total_loss_db: 40.0,
            ..ChannelModel::default()
        };
        let pulses = 16u32;
        let (q, _) = analytic_gain_and_error(pulses, 0.8, &ch).unwrap();
        let m = 0.8 / 16.0 * 1e-4;
        let mean_overlap = (1..pulses).map(|d| f64::from(pulses - d)).sum::<f64>() / 15.0;
        assert!((q - m * mean_overlap).abs() < 1e-3 * q);
    }

    #[test]
    fn analytic_gain_falls_with_loss() {
        let mut prev = f64::INFINITY;
        for db in 0..40 {
            let ch = ChannelModel {
                total_loss_db: f64::from(db),
                dark_rate_cps: 200.0,
                visibility: PerDelay::Uniform(0.96),
                ..ChannelModel::default()
            };
            let (q, _) = analytic_gain_and_error(128, 0.8, &ch).unwrap();
            assert!(q <= prev);
            prev = q;
        }
    }

    #[test]
    fn channel_validation() {
        let bad = ChannelModel {
            visibility: PerDelay::Table(vec![0.9; 3]),
            ..ChannelModel::default()
        };
        assert!(bad.validate(8).is_err());
        let bad = ChannelModel {
            visibility: PerDelay::Uniform(1.2),
            ..ChannelModel::default()
        };
        assert!(bad.validate(8).is_err());
        assert!(ChannelModel::default().validate(8).is_ok());
    }
}
