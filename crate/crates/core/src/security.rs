//! Asymptotic security bounds for round-robin DPS key distribution.
//!
//! Everything here is a pure function of its arguments. Entropies are in bits.
//!
//! The privacy-amplification cost splits the Poisson source at a threshold
//! photon number `n_th`: every detection is assumed to come from the
//! highest-photon-number states available, so the `n > n_th` tail is charged
//! in full and the remaining gain `Q_{n_th}` is charged at the `n_th` rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pulse trains per second with a 660 ms key window at 10 kHz.
pub const DEFAULT_TRAINS_PER_SECOND: f64 = 6600.0;

/// Terms of the infinite Poisson sums are dropped once the mass falls below this.
pub const SUM_TRUNCATION_PMF: f64 = 1e-15;

/// Inputs to the key-rate computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityParams {
    /// Pulses per train.
    pub pulses: u32,
    /// Mean total photon number per train.
    pub mu: f64,
    /// Mean valid detections per train.
    pub gain: f64,
    /// Observed bit error rate.
    pub e_bit: f64,
}

impl SecurityParams {
    pub fn new(pulses: u32, mu: f64, gain: f64, e_bit: f64) -> Result<Self> {
        let params = SecurityParams {
            pulses,
            mu,
            gain,
            e_bit,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pulses < 2 {
            return Err(Error::domain(format!(
                "train length must be at least 2, got {}",
                self.pulses
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::domain(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(0.0..=1.0).contains(&self.gain) {
            return Err(Error::domain(format!(
                "gain must lie in [0, 1], got {}",
                self.gain
            )));
        }
        if !(0.0..=0.5).contains(&self.e_bit) {
            return Err(Error::domain(format!(
                "bit error rate must lie in [0, 0.5], got {}",
                self.e_bit
            )));
        }
        Ok(())
    }
}

/// Per-round accounting of the key rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    /// Threshold photon number; `None` when the gain is zero.
    pub n_th: Option<u32>,
    /// Residual gain `Q - P(N > n_th)`.
    pub q_nth: f64,
    /// Privacy-amplification cost per round (`Q * H_PA`).
    pub h_pa: f64,
    /// Error-correction cost per round (`Q * H(e_bit)`).
    pub ec_cost: f64,
    pub rate_per_round: f64,
    pub rate_bps: f64,
    /// Set when `rate_per_round <= 0`.
    pub insecure: bool,
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!(
            "entropy argument must lie in [0, 1], got {p}"
        )));
    }
    Ok(h2(p))
}

pub(crate) fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// `ln(n!)`: exact summation for small `n`, Stirling series above.
pub(crate) fn ln_factorial(n: u64) -> f64 {
    const EXACT_LIMIT: u64 = 256;
    if n < EXACT_LIMIT {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    x * x.ln() - x
        + 0.5 * (2.0 * std::f64::consts::PI * x).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

fn check_mean(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("Poisson mean must be > 0, got {mu}")))
    }
}

fn pmf_unchecked(n: u64, mu: f64) -> f64 {
    (n as f64 * mu.ln() - mu - ln_factorial(n)).exp()
}

/// Poisson probability mass `e^{-mu} mu^n / n!`, evaluated in log space.
pub fn poisson_pmf(n: u64, mu: f64) -> Result<f64> {
    check_mean(mu)?;
    Ok(pmf_unchecked(n, mu))
}

/// `P(N >= n_min)` for `N ~ Poisson(mu)`.
pub fn poisson_tail(n_min: u64, mu: f64) -> Result<f64> {
    check_mean(mu)?;
    Ok(tail_unchecked(n_min, mu))
}

fn tail_unchecked(n_min: u64, mu: f64) -> f64 {
    if n_min == 0 {
        return 1.0;
    }
    if (n_min as f64) <= mu {
        // Bulk side: the complement is the short sum.
        let head: f64 = (0..n_min).map(|n| pmf_unchecked(n, mu)).sum();
        return (1.0 - head).clamp(0.0, 1.0);
    }
    // Upper tail: sum terms directly so small tails keep their relative accuracy.
    let mut total = 0.0;
    let mut n = n_min;
    loop {
        let p = pmf_unchecked(n, mu);
        total += p;
        if p < total * 1e-17 || p == 0.0 {
            break;
        }
        n += 1;
    }
    total.min(1.0)
}

/// Upper bound on the phase error rate of an `n`-photon train of `pulses` pulses.
pub fn phase_error_bound(n: u64, pulses: u32) -> Result<f64> {
    if pulses < 2 {
        return Err(Error::domain(format!(
            "train length must be at least 2, got {pulses}"
        )));
    }
    Ok(phase_error_unchecked(n, pulses))
}

fn phase_error_unchecked(n: u64, pulses: u32) -> f64 {
    let base = 1.0 - 2.0 / pulses as f64;
    (1.0 - base.powf(n as f64)) / 2.0
}

/// Smallest `n_th >= 1` whose Poisson tail above `n_th` fits inside the gain.
pub fn select_threshold(mu: f64, gain: f64) -> Result<u32> {
    check_mean(mu)?;
    if !(gain > 0.0 && gain <= 1.0) {
        return Err(Error::domain(format!(
            "threshold selection needs gain in (0, 1], got {gain}"
        )));
    }
    let mut n_th: u32 = 1;
    while tail_unchecked(u64::from(n_th) + 1, mu) > gain {
        n_th += 1;
    }
    Ok(n_th)
}

/// Residual gain attributed to exactly `n_th` photons. May be negative.
pub fn residual_gain(mu: f64, gain: f64, n_th: u32) -> Result<f64> {
    check_mean(mu)?;
    Ok(gain - tail_unchecked(u64::from(n_th) + 1, mu))
}

/// Per-round privacy-amplification cost `Q * H_PA` for a given threshold.
pub fn privacy_amplification_cost(params: &SecurityParams, n_th: u32) -> Result<f64> {
    params.validate()?;
    let q_nth = residual_gain(params.mu, params.gain, n_th)?;
    if q_nth < 0.0 {
        return Err(Error::Precondition(format!(
            "threshold n_th = {n_th} is infeasible: residual gain {q_nth:e} < 0"
        )));
    }
    let mu = params.mu;
    let mut cost = q_nth * h2(phase_error_unchecked(u64::from(n_th), params.pulses));
    let mut n = u64::from(n_th) + 1;
    loop {
        let p = pmf_unchecked(n, mu);
        if p < SUM_TRUNCATION_PMF && (n as f64) > mu {
            break;
        }
        cost += p * h2(phase_error_unchecked(n, params.pulses));
        n += 1;
    }
    // Remaining tail charged at the maximal entropy of one bit.
    cost += tail_unchecked(n, mu);
    Ok(cost)
}

/// Key rate per train using `DEFAULT_TRAINS_PER_SECOND` for the bps figure.
pub fn key_rate(params: &SecurityParams) -> Result<RateBreakdown> {
    key_rate_at(params, DEFAULT_TRAINS_PER_SECOND)
}

pub fn key_rate_at(params: &SecurityParams, trains_per_second: f64) -> Result<RateBreakdown> {
    params.validate()?;
    if params.gain == 0.0 {
        return Ok(RateBreakdown {
            n_th: None,
            q_nth: 0.0,
            h_pa: 0.0,
            ec_cost: 0.0,
            rate_per_round: 0.0,
            rate_bps: 0.0,
            insecure: true,
        });
    }
    let n_th = select_threshold(params.mu, params.gain)?;
    let q_nth = residual_gain(params.mu, params.gain, n_th)?;
    let h_pa = privacy_amplification_cost(params, n_th)?;
    let ec_cost = params.gain * h2(params.e_bit);
    let rate_per_round = params.gain - ec_cost - h_pa;
    Ok(RateBreakdown {
        n_th: Some(n_th),
        q_nth,
        h_pa,
        ec_cost,
        rate_per_round,
        rate_bps: rate_per_round * trains_per_second,
        insecure: rate_per_round <= 0.0,
    })
}

/// Generic per-bit rate `1 - H(e_bit) - H(e_ph)`.
pub fn generic_key_fraction(e_bit: f64, e_ph: f64) -> Result<f64> {
    Ok(1.0 - binary_entropy(e_bit)? - binary_entropy(e_ph)?)
}

/// Final key bits after `rounds` trains; negative rates give no key.
pub fn final_key_length(rate_per_round: f64, rounds: u64) -> u64 {
    (rate_per_round.max(0.0) * rounds as f64).floor() as u64
}
