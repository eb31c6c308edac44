use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_lock::{DriftModel, LockConfig};
use crate::photonics::{ChannelModel, PerDelay, SLOT_DURATION_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Gain and error from the closed-form channel model.
    Analytic,
    /// Full per-round simulation.
    Montecarlo,
    /// Gain (or sifted count) and error rate given directly.
    Published,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Mode::Analytic),
            "montecarlo" => Ok(Mode::Montecarlo),
            "published" => Ok(Mode::Published),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Analytic => "analytic",
            Mode::Montecarlo => "montecarlo",
            Mode::Published => "published",
        })
    }
}

/// Everything a session needs. Keys of the text form are the field names in
/// kebab-case, e.g. `total-loss-db = 18`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub pulses: u32,
    pub mu: f64,
    pub total_loss_db: f64,
    pub excess_loss_db: f64,
    pub efficiency: f64,
    pub dark_rate_cps: f64,
    pub gate_fraction: f64,
    pub visibility: PerDelay,
    pub phase_offset: PerDelay,
    pub round_rate_hz: f64,
    pub locking_window_ms: f64,
    pub qkd_window_ms: f64,
    pub settle_us: f64,
    pub total_rounds: Option<u64>,
    pub duration_s: Option<f64>,
    pub seed: Option<u64>,
    pub mode: Mode,
    /// Measured gain, used as given in published mode.
    pub gain: Option<f64>,
    /// Measured sifted-key size; gives the gain when `gain` is unset.
    pub sifted_bits: Option<u64>,
    /// Measured bit error rate for published mode.
    pub e_bit: Option<f64>,
    /// Simulate drift and the calibration loop; otherwise the residual phase
    /// is `phase_offset`.
    pub phase_lock: bool,
    pub drift_sigma: f64,
    pub drift_rate: f64,
    pub lock_flux: f64,
    pub lock_efficiency: f64,
    pub lock_steps: usize,
    pub refine_step: f64,
    pub refine_steps: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        let drift = DriftModel::default();
        let lock = LockConfig::default();
        RunConfig {
            pulses: 128,
            mu: 0.8,
            total_loss_db: 18.0,
            excess_loss_db: 0.0,
            efficiency: 1.0,
            dark_rate_cps: 200.0,
            gate_fraction: 1.0,
            visibility: PerDelay::Uniform(0.96),
            phase_offset: PerDelay::Uniform(0.0),
            round_rate_hz: 10_000.0,
            locking_window_ms: 340.0,
            qkd_window_ms: 660.0,
            settle_us: 90.0,
            total_rounds: None,
            duration_s: None,
            seed: None,
            mode: Mode::Analytic,
            gain: None,
            sifted_bits: None,
            e_bit: None,
            phase_lock: false,
            drift_sigma: drift.sigma_rad_per_sqrt_s,
            drift_rate: drift.rate_rad_per_s,
            lock_flux: lock.bright_flux,
            lock_efficiency: lock.efficiency,
            lock_steps: lock.steps,
            refine_step: lock.refine_step,
            refine_steps: lock.refine_steps,
        }
    }
}

/// Keys accepted by [`RunConfig::set`], in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "pulses",
    "mu",
    "total-loss-db",
    "excess-loss-db",
    "efficiency",
    "dark-rate-cps",
    "gate-fraction",
    "visibility",
    "phase-offset",
    "round-rate-hz",
    "locking-window-ms",
    "qkd-window-ms",
    "settle-us",
    "total-rounds",
    "duration-s",
    "seed",
    "mode",
    "gain",
    "sifted-bits",
    "e-bit",
    "phase-lock",
    "drift-sigma",
    "drift-rate",
    "lock-flux",
    "lock-efficiency",
    "lock-steps",
    "refine-step",
    "refine-steps",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        v => Err(Error::config(format!("{key}: expected on/off, got {v:?}"))),
    }
}

/// A single number, or a comma-separated table indexed by delay.
fn parse_per_delay(key: &str, value: &str) -> Result<PerDelay> {
    let items: Vec<&str> = value.split(',').map(str::trim).collect();
    if items.len() == 1 {
        return parse(key, items[0]).map(PerDelay::Uniform);
    }
    items
        .into_iter()
        .map(|v| parse(key, v))
        .collect::<Result<Vec<f64>>>()
        .map(PerDelay::Table)
}

fn format_per_delay(v: &PerDelay) -> String {
    match v {
        PerDelay::Uniform(x) => x.to_string(),
        PerDelay::Table(t) => t.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    }
}

fn format_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl RunConfig {
    /// The published experiment: 103,679,400 rounds over 15,709 s with the
    /// reported sifted-key size and mean error rate.
    pub fn published() -> Self {
        RunConfig {
            mode: Mode::Published,
            total_rounds: Some(103_679_400),
            duration_s: Some(15_709.0),
            sifted_bits: Some(675_937),
            e_bit: Some(0.089),
            ..RunConfig::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "pulses" => self.pulses = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "total-loss-db" => self.total_loss_db = parse(key, value)?,
            "excess-loss-db" => self.excess_loss_db = parse(key, value)?,
            "efficiency" => self.efficiency = parse(key, value)?,
            "dark-rate-cps" => self.dark_rate_cps = parse(key, value)?,
            "gate-fraction" => self.gate_fraction = parse(key, value)?,
            "visibility" => self.visibility = parse_per_delay(key, value)?,
            "phase-offset" => self.phase_offset = parse_per_delay(key, value)?,
            "round-rate-hz" => self.round_rate_hz = parse(key, value)?,
            "locking-window-ms" => self.locking_window_ms = parse(key, value)?,
            "qkd-window-ms" => self.qkd_window_ms = parse(key, value)?,
            "settle-us" => self.settle_us = parse(key, value)?,
            "total-rounds" => self.total_rounds = parse_opt(key, value)?,
            "duration-s" => self.duration_s = parse_opt(key, value)?,
            "seed" => self.seed = parse_opt(key, value)?,
            "mode" => self.mode = value.trim().parse()?,
            "gain" => self.gain = parse_opt(key, value)?,
            "sifted-bits" => self.sifted_bits = parse_opt(key, value)?,
            "e-bit" => self.e_bit = parse_opt(key, value)?,
            "phase-lock" => self.phase_lock = parse_bool(key, value)?,
            "drift-sigma" => self.drift_sigma = parse(key, value)?,
            "drift-rate" => self.drift_rate = parse(key, value)?,
            "lock-flux" => self.lock_flux = parse(key, value)?,
            "lock-efficiency" => self.lock_efficiency = parse(key, value)?,
            "lock-steps" => self.lock_steps = parse(key, value)?,
            "refine-step" => self.refine_step = parse(key, value)?,
            "refine-steps" => self.refine_steps = parse(key, value)?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "pulses" => self.pulses.to_string(),
            "mu" => self.mu.to_string(),
            "total-loss-db" => self.total_loss_db.to_string(),
            "excess-loss-db" => self.excess_loss_db.to_string(),
            "efficiency" => self.efficiency.to_string(),
            "dark-rate-cps" => self.dark_rate_cps.to_string(),
            "gate-fraction" => self.gate_fraction.to_string(),
            "visibility" => format_per_delay(&self.visibility),
            "phase-offset" => format_per_delay(&self.phase_offset),
            "round-rate-hz" => self.round_rate_hz.to_string(),
            "locking-window-ms" => self.locking_window_ms.to_string(),
            "qkd-window-ms" => self.qkd_window_ms.to_string(),
            "settle-us" => self.settle_us.to_string(),
            "total-rounds" => format_opt(&self.total_rounds),
            "duration-s" => format_opt(&self.duration_s),
            "seed" => format_opt(&self.seed),
            "mode" => self.mode.to_string(),
            "gain" => format_opt(&self.gain),
            "sifted-bits" => format_opt(&self.sifted_bits),
            "e-bit" => format_opt(&self.e_bit),
            "phase-lock" => if self.phase_lock { "on" } else { "off" }.to_string(),
            "drift-sigma" => self.drift_sigma.to_string(),
            "drift-rate" => self.drift_rate.to_string(),
            "lock-flux" => self.lock_flux.to_string(),
            "lock-efficiency" => self.lock_efficiency.to_string(),
            "lock-steps" => self.lock_steps.to_string(),
            "refine-step" => self.refine_step.to_string(),
            "refine-steps" => self.refine_steps.to_string(),
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pulses < 2 || self.pulses > 65_536 {
            return Err(Error::config(format!(
                "pulses must lie in [2, 65536], got {}",
                self.pulses
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::config(format!("mu must be > 0, got {}", self.mu)));
        }
        let non_negative = [
            ("round-rate-hz", self.round_rate_hz),
            ("locking-window-ms", self.locking_window_ms),
            ("qkd-window-ms", self.qkd_window_ms),
            ("settle-us", self.settle_us),
            ("dark-rate-cps", self.dark_rate_cps),
            ("total-loss-db", self.total_loss_db),
            ("excess-loss-db", self.excess_loss_db),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{key} must be >= 0, got {v}")));
            }
        }
        if self.locking_window_ms + self.qkd_window_ms > 1000.0 + 1e-9 {
            return Err(Error::config(format!(
                "locking and key windows exceed one second: {} + {} ms",
                self.locking_window_ms, self.qkd_window_ms
            )));
        }
        if let Some(d) = self.duration_s {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::config(format!("duration-s must be >= 0, got {d}")));
            }
        }
        if self.mode == Mode::Montecarlo && self.seed.is_none() {
            return Err(Error::config("montecarlo mode requires a seed"));
        }
        self.channel()
            .validate(self.pulses)
            .map_err(|e| Error::config(e.to_string()))?;
        self.drift()
            .validate()
            .map_err(|e| Error::config(e.to_string()))?;
        if self.phase_lock {
            self.lock()
                .validate()
                .map_err(|e| Error::config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn channel(&self) -> ChannelModel {
        ChannelModel {
            total_loss_db: self.total_loss_db,
            excess_loss_db: self.excess_loss_db,
            efficiency: self.efficiency,
            dark_rate_cps: self.dark_rate_cps,
            slot_duration_s: SLOT_DURATION_S,
            gate_fraction: self.gate_fraction,
            visibility: self.visibility.clone(),
            phase_offset: self.phase_offset.clone(),
        }
    }

    pub fn drift(&self) -> DriftModel {
        DriftModel {
            sigma_rad_per_sqrt_s: self.drift_sigma,
            rate_rad_per_s: self.drift_rate,
            ..DriftModel::default()
        }
    }

    pub fn lock(&self) -> LockConfig {
        LockConfig {
            steps: self.lock_steps,
            bright_flux: self.lock_flux,
            efficiency: self.lock_efficiency,
            window_s: self.locking_window_ms / 1000.0,
            refine_step: self.refine_step,
            refine_steps: self.refine_steps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::published();
        cfg.visibility = PerDelay::Table(vec![0.9, 0.95, 0.97]);
        cfg.seed = Some(17);
        cfg.phase_lock = true;
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::from_text(
            "# lab setup\n\nmu = 0.5  # per train\nmode=montecarlo\nseed = 3\nphase-lock = on\n",
        )
        .unwrap();
        assert_eq!(cfg.mu, 0.5);
        assert_eq!(cfg.mode, Mode::Montecarlo);
        assert_eq!(cfg.seed, Some(3));
        assert!(cfg.phase_lock);
    }

    #[test]
    fn bad_lines_are_config_errors() {
        for text in ["mu 0.5", "bogus = 1", "mu = abc", "mode = fast", "phase-lock = maybe"] {
            assert!(matches!(RunConfig::from_text(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig::published().validate().is_ok());
        let mc = RunConfig {
            mode: Mode::Montecarlo,
            ..RunConfig::default()
        };
        assert!(matches!(mc.validate(), Err(Error::Config(_))));
        let windows = RunConfig {
            locking_window_ms: 500.0,
            ..RunConfig::default()
        };
        assert!(windows.validate().is_err());
        let short = RunConfig {
            pulses: 1,
            ..RunConfig::default()
        };
        assert!(short.validate().is_err());
        let table = RunConfig {
            visibility: PerDelay::Table(vec![0.9; 4]),
            ..RunConfig::default()
        };
        assert!(table.validate().is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let mut cfg = RunConfig::default();
        for key in CONFIG_KEYS {
            let value = cfg.get(key).unwrap();
            cfg.set(key, &value).unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
    }
}
