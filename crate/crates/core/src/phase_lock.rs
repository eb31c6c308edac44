//! Active phase stabilisation of the variable-delay interferometer.
//!
//! During the locking window bright reference light is sent through every
//! delay in turn. For each delay the phase modulator steps through `N`
//! equally spaced extra phases, the fraction of counts on detector 1 is fitted
//! to `(1 + cos(phi + phi_ext)) / 2` by least squares, and the estimate is
//! stored in a lookup table read by every key round.
//!
//! The simulator side ([`DriftState`], [`Interferometer`]) holds the true
//! interferometer phases. They drift with a common wavelength wander scaled
//! by the delay length.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photonics::interference_means;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_signed(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Wraps an angle into `[0, 2 pi)`.
pub fn wrap_positive(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Phase drift of the interferometer arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    /// Random-walk strength at the reference delay, rad / sqrt(s).
    pub sigma_rad_per_sqrt_s: f64,
    /// Deterministic drift at the reference delay, rad / s.
    pub rate_rad_per_s: f64,
    /// Delay (in slots) at which the two figures above apply; other delays
    /// scale linearly with their length.
    pub reference_delay: f64,
}

impl Default for DriftModel {
    fn default() -> Self {
        DriftModel {
            sigma_rad_per_sqrt_s: 0.05,
            rate_rad_per_s: 0.02,
            reference_delay: 128.0,
        }
    }
}

impl DriftModel {
    pub fn none() -> Self {
        DriftModel {
            sigma_rad_per_sqrt_s: 0.0,
            rate_rad_per_s: 0.0,
            reference_delay: 128.0,
        }
    }

    pub fn scale(&self, d: u32) -> f64 {
        f64::from(d) / self.reference_delay
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_rad_per_sqrt_s.is_nan()
            || self.sigma_rad_per_sqrt_s < 0.0
            || !self.rate_rad_per_s.is_finite()
        {
            return Err(Error::domain("drift sigma must be >= 0 and rate finite"));
        }
        if self.reference_delay.is_nan() || self.reference_delay <= 0.0 {
            return Err(Error::domain("drift reference delay must be > 0"));
        }
        Ok(())
    }
}

/// True interferometer phases, advanced in simulated time.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftState {
    model: DriftModel,
    base: Vec<f64>,
    wander: f64,
    time_s: f64,
}

impl DriftState {
    /// Starts with the given static per-delay phases.
    pub fn new(model: DriftModel, base: Vec<f64>) -> Self {
        DriftState {
            model,
            base,
            wander: 0.0,
            time_s: 0.0,
        }
    }

    /// Static phases drawn uniformly on `[0, 2 pi)`; delay 0 has none.
    pub fn random<R: Rng + ?Sized>(model: DriftModel, delays: u32, rng: &mut R) -> Self {
        let base = (0..delays)
            .map(|d| if d == 0 { 0.0 } else { rng.random_range(0.0..TAU) })
            .collect();
        DriftState::new(model, base)
    }

    pub fn delays(&self) -> u32 {
        self.base.len() as u32
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn model(&self) -> &DriftModel {
        &self.model
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        if dt <= 0.0 {
            return;
        }
        let kick: f64 = if self.model.sigma_rad_per_sqrt_s > 0.0 {
            rng.sample::<f64, _>(StandardNormal) * self.model.sigma_rad_per_sqrt_s * dt.sqrt()
        } else {
            0.0
        };
        self.wander += self.model.rate_rad_per_s * dt + kick;
        self.time_s += dt;
    }

    /// True relative arm phase of delay `d`, in `[0, 2 pi)`.
    pub fn phase(&self, d: u32) -> f64 {
        wrap_positive(self.base[d as usize] + self.model.scale(d) * self.wander)
    }
}

/// Static properties of the interferometer as seen by the bright reference light.
#[derive(Debug, Clone, PartialEq)]
pub struct Interferometer {
    /// Intrinsic fringe visibility per delay.
    pub visibility: Vec<f64>,
    /// Optical throughput per delay relative to the nominal path.
    pub throughput: Vec<f64>,
}

impl Interferometer {
    pub fn uniform(delays: u32, visibility: f64) -> Self {
        Interferometer {
            visibility: vec![visibility; delays as usize],
            throughput: vec![1.0; delays as usize],
        }
    }
}

/// Calibration light and search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockConfig {
    /// Phase steps per delay.
    pub steps: usize,
    /// Reference light, photons per second.
    pub bright_flux: f64,
    pub efficiency: f64,
    /// Locking window shared by all delays, seconds.
    pub window_s: f64,
    pub refine_step: f64,
    pub refine_steps: u32,
}

impl Default for LockConfig {
    fn default() -> Self {
        LockConfig {
            steps: 4,
            bright_flux: 60e6,
            efficiency: 0.1,
            window_s: 0.340,
            refine_step: 0.02,
            refine_steps: 5,
        }
    }
}

impl LockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 3 {
            return Err(Error::domain(format!(
                "phase estimation needs at least 3 steps, got {}",
                self.steps
            )));
        }
        if !(self.bright_flux > 0.0 && self.efficiency > 0.0 && self.window_s > 0.0) {
            return Err(Error::domain("flux, efficiency and window must be > 0"));
        }
        if self.refine_step.is_nan() || self.refine_step <= 0.0 {
            return Err(Error::domain("refinement step must be > 0"));
        }
        Ok(())
    }

    /// The `N` extra phases `2 pi k / N`.
    pub fn applied_phases(&self) -> Vec<f64> {
        standard_phases(self.steps)
    }
}

pub fn standard_phases(steps: usize) -> Vec<f64> {
    (0..steps).map(|k| TAU * k as f64 / steps as f64).collect()
}

/// Expected counts `(C1, C2)` on the two detectors for one phase step.
pub fn fringe_means(total: f64, visibility: f64, phase: f64) -> (f64, f64) {
    // Equal arms, each carrying the full pulse mean.
    interference_means(total, total, visibility, phase)
}

fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Counts recorded while the modulator applies `phi_ext` to delay `d`.
#[allow(clippy::too_many_arguments)]
pub fn measure_fringe<R: Rng + ?Sized>(
    truth: &DriftState,
    optics: &Interferometer,
    d: u32,
    phi_ext: f64,
    bright_flux: f64,
    window_s: f64,
    efficiency: f64,
    rng: &mut R,
) -> (u64, u64) {
    let total = bright_flux * window_s * efficiency * optics.throughput[d as usize];
    let (m1, m2) = fringe_means(total, optics.visibility[d as usize], truth.phase(d) + phi_ext);
    (poisson_draw(m1, rng), poisson_draw(m2, rng))
}

fn fractions(counts: &[(u64, u64)]) -> Result<Vec<f64>> {
    counts
        .iter()
        .enumerate()
        .map(|(step, &(c1, c2))| {
            let n = c1 + c2;
            if n == 0 {
                Err(Error::InsufficientCounts { step })
            } else {
                Ok(c1 as f64 / n as f64)
            }
        })
        .collect()
}

/// Least-squares objective over measured detector-1 fractions.
pub fn fit_cost(phi: f64, fractions: &[f64], applied: &[f64]) -> f64 {
    fractions
        .iter()
        .zip(applied)
        .map(|(f, a)| {
            let model = 0.5 * (1.0 + (phi + a).cos());
            (model - f).powi(2)
        })
        .sum()
}

/// Phase estimate from counts taken at the standard `2 pi k / N` steps.
pub fn estimate_phase(counts: &[(u64, u64)]) -> Result<f64> {
    estimate_phase_with(counts, &standard_phases(counts.len()))
}

/// Phase estimate for arbitrary applied phases.
pub fn estimate_phase_with(counts: &[(u64, u64)], applied: &[f64]) -> Result<f64> {
    if counts.len() < 3 || counts.len() != applied.len() {
        return Err(Error::domain(format!(
            "need at least 3 phase steps with matching applied phases, got {} and {}",
            counts.len(),
            applied.len()
        )));
    }
    let f = fractions(counts)?;
    Ok(estimate_from_fractions(&f, applied))
}

pub(crate) fn estimate_from_fractions(f: &[f64], applied: &[f64]) -> f64 {
    // Quadrature start: exact minimiser for equally spaced steps.
    let (mut c, mut s) = (0.0, 0.0);
    for (fk, a) in f.iter().zip(applied) {
        let g = fk - 0.5;
        c += g * a.cos();
        s += g * a.sin();
    }
    let mut phi = if c == 0.0 && s == 0.0 { 0.0 } else { (-s).atan2(c) };
    let mut cost = fit_cost(phi, f, applied);
    // Coarse scan guards uneven spacings where the quadrature start is off.
    for k in 0..64 {
        let cand = TAU * f64::from(k) / 64.0;
        let cand_cost = fit_cost(cand, f, applied);
        if cand_cost < cost - 1e-12 {
            phi = cand;
            cost = cand_cost;
        }
    }
    // Newton polish on dS/dphi.
    for _ in 0..30 {
        let (mut grad, mut curv) = (0.0, 0.0);
        for (fk, a) in f.iter().zip(applied) {
            let x = phi + a;
            let resid = 0.5 * (1.0 + x.cos()) - fk;
            grad -= resid * x.sin();
            curv += 0.5 * x.sin().powi(2) - resid * x.cos();
        }
        if curv <= 0.0 {
            break;
        }
        let next = phi - grad / curv;
        let next_cost = fit_cost(next, f, applied);
        if next_cost > cost {
            break;
        }
        let moved = (next - phi).abs();
        phi = next;
        cost = next_cost;
        if moved < 1e-15 {
            break;
        }
    }
    wrap_positive(phi)
}

/// Local search of `cost` on `phi +- k * step`, `k <= n_steps`.
pub fn refine_by(phi: f64, step: f64, n_steps: u32, cost: impl Fn(f64) -> f64) -> f64 {
    let mut best = phi;
    let mut best_cost = cost(phi);
    for k in 1..=n_steps {
        for sign in [-1.0, 1.0] {
            let cand = phi + sign * f64::from(k) * step;
            let c = cost(cand);
            if c < best_cost {
                best = cand;
                best_cost = c;
            }
        }
    }
    wrap_positive(best)
}

/// Refines an estimate against the fit objective of the measured fractions.
pub fn refine(phi: f64, step: f64, n_steps: u32, fractions: &[f64], applied: &[f64]) -> Result<f64> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::domain(format!("refinement step must be > 0, got {step}")));
    }
    Ok(refine_by(phi, step, n_steps, |p| fit_cost(p, fractions, applied)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    /// Compensation phase in `[0, 2 pi)`.
    pub phase: f64,
    /// Simulated time of the last successful measurement, seconds.
    pub timestamp: f64,
    /// Absolute phase error at that time, radians.
    pub residual: f64,
    /// The last attempt failed and `phase` is carried over.
    pub stale: bool,
}

impl Default for CalibrationEntry {
    fn default() -> Self {
        CalibrationEntry {
            phase: 0.0,
            timestamp: 0.0,
            residual: 0.0,
            stale: true,
        }
    }
}

/// Compensation phase per delay, indexed by gate word.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    entries: Vec<CalibrationEntry>,
}

impl CalibrationTable {
    pub fn new(delays: u32) -> Self {
        CalibrationTable {
            entries: vec![CalibrationEntry::default(); delays as usize],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, d: u32) -> &CalibrationEntry {
        &self.entries[d as usize]
    }

    pub fn entries(&self) -> &[CalibrationEntry] {
        &self.entries
    }

    pub fn compensation(&self, d: u32) -> f64 {
        self.entries[d as usize].phase
    }

    pub fn set(&mut self, d: u32, entry: CalibrationEntry) {
        let mut entry = entry;
        entry.phase = wrap_positive(entry.phase);
        self.entries[d as usize] = entry;
    }

    /// `d<TAB>phase_rad<TAB>residual<TAB>timestamp`, one line per delay.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (d, e) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{d}\t{}\t{}\t{}", e.phase, e.residual, e.timestamp);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Codec(format!("calibration line {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 tab-separated fields"));
            }
            let d: usize = fields[0].trim().parse().map_err(|_| bad("bad delay"))?;
            if d != entries.len() {
                return Err(bad("delays must be listed in order from 0"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
            let phase = num(fields[1])?;
            if !(0.0..TAU).contains(&phase) {
                return Err(bad("phase outside [0, 2 pi)"));
            }
            entries.push(CalibrationEntry {
                phase,
                residual: num(fields[2])?,
                timestamp: num(fields[3])?,
                stale: false,
            });
        }
        Ok(CalibrationTable { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Outcome of one locking window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationSummary {
    pub updated: Vec<u32>,
    pub stale: Vec<u32>,
}

/// Measures and fits one delay. The truth is read, never advanced.
pub fn calibrate_entry<R: Rng + ?Sized>(
    truth: &DriftState,
    optics: &Interferometer,
    config: &LockConfig,
    d: u32,
    step_window_s: f64,
    rng: &mut R,
) -> Result<CalibrationEntry> {
    let applied = config.applied_phases();
    let counts: Vec<(u64, u64)> = applied
        .iter()
        .map(|&a| {
            measure_fringe(
                truth,
                optics,
                d,
                a,
                config.bright_flux,
                step_window_s,
                config.efficiency,
                rng,
            )
        })
        .collect();
    let f = fractions(&counts)?;
    let start = estimate_from_fractions(&f, &applied);
    let phase = refine(start, config.refine_step, config.refine_steps, &f, &applied)?;
    Ok(CalibrationEntry {
        phase,
        timestamp: truth.time_s(),
        residual: wrap_signed(truth.phase(d) - phase).abs(),
        stale: false,
    })
}

/// Runs one locking window: every delay in turn, sharing `config.window_s`.
/// The truth advances while the delays are traversed.
pub fn calibrate_all<R: Rng + ?Sized>(
    table: &mut CalibrationTable,
    truth: &mut DriftState,
    optics: &Interferometer,
    config: &LockConfig,
    rng: &mut R,
) -> Result<CalibrationSummary> {
    config.validate()?;
    let delays = table.len() as u32;
    if truth.delays() != delays || optics.visibility.len() != delays as usize {
        return Err(Error::domain("table, truth and interferometer disagree on delay count"));
    }
    let per_delay = config.window_s / f64::from(delays);
    let per_step = per_delay / config.steps as f64;
    let mut summary = CalibrationSummary::default();
    for d in 0..delays {
        match calibrate_entry(truth, optics, config, d, per_step, rng) {
            Ok(entry) => {
                table.set(d, entry);
                summary.updated.push(d);
            }
            Err(Error::InsufficientCounts { .. }) => {
                table.entries[d as usize].stale = true;
                summary.stale.push(d);
            }
            Err(e) => return Err(e),
        }
        truth.advance(per_delay, rng);
    }
    Ok(summary)
}

/// Visibility seen by a key round with residual phase error `error`.
pub fn effective_visibility(visibility: f64, error: f64) -> f64 {
    visibility * error.cos()
}

/// Simulated phase-lock loop: truth, optics and the table Bob maintains.
#[derive(Debug, Clone)]
pub struct PhaseLockLoop {
    pub truth: DriftState,
    pub optics: Interferometer,
    pub table: CalibrationTable,
    pub config: LockConfig,
}

impl PhaseLockLoop {
    pub fn new(truth: DriftState, optics: Interferometer, config: LockConfig) -> Self {
        let table = CalibrationTable::new(truth.delays());
        PhaseLockLoop {
            truth,
            optics,
            table,
            config,
        }
    }

    pub fn lock<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<CalibrationSummary> {
        calibrate_all(&mut self.table, &mut self.truth, &self.optics, &self.config, rng)
    }

    /// Residual interferometer phase after compensation, in `(-pi, pi]`.
    pub fn residual(&self, d: u32) -> f64 {
        wrap_signed(self.truth.phase(d) - self.table.compensation(d))
    }

    pub fn visibility(&self, d: u32) -> f64 {
        effective_visibility(self.optics.visibility[d as usize], self.residual(d))
    }
}

/// Per-delay visibility statistics over a long run of lock/key cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityTrace {
    pub seconds: u64,
    /// Fraction of cycles in which each delay stayed at or above the threshold.
    pub fraction_above: Vec<f64>,
    pub min_visibility: Vec<f64>,
    pub mean_visibility: Vec<f64>,
}

/// Runs `seconds` lock/key cycles and samples each delay's visibility at the
/// end of every key window, when it has drifted longest since calibration.
pub fn track_visibility<R: Rng + ?Sized>(
    lock: &mut PhaseLockLoop,
    seconds: u64,
    qkd_window_s: f64,
    threshold: f64,
    rng: &mut R,
) -> Result<VisibilityTrace> {
    let delays = lock.truth.delays() as usize;
    let mut above = vec![0u64; delays];
    let mut min_v = vec![f64::INFINITY; delays];
    let mut sum_v = vec![0.0; delays];
    for _ in 0..seconds {
        lock.lock(rng)?;
        lock.truth.advance(qkd_window_s, rng);
        for d in 0..delays {
            let v = lock.visibility(d as u32);
            if v >= threshold {
                above[d] += 1;
            }
            min_v[d] = min_v[d].min(v);
            sum_v[d] += v;
        }
    }
    let n = seconds.max(1) as f64;
    Ok(VisibilityTrace {
        seconds,
        fraction_above: above.iter().map(|&a| a as f64 / n).collect(),
        min_visibility: min_v,
        mean_visibility: sum_v.iter().map(|s| s / n).collect(),
    })
}
