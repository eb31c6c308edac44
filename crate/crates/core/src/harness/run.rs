use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::report::{DelayRow, SessionReport};
use super::schedule::{schedule, SecondPlan};
use super::{Mode, RunConfig};
use crate::bits::RngBits;
use crate::error::{Error, Result};
use crate::phase_lock::{
    track_visibility, CalibrationTable, DriftState, Interferometer, PhaseLockLoop, VisibilityTrace,
};
use crate::photonics::{
    analytic_gain_and_error, apply_loss, build_train, delay_expectation, extract_valid,
    interferometer_output, sample_clicks, ChannelModel, DetectorModel,
};
use crate::protocol::{interpret_detection, Alice, Bob, SessionLedger, SiftedRecord};

const ROLE_ALICE: u64 = 1;
const ROLE_BOB: u64 = 2;
const ROLE_CHANNEL: u64 = 3;
const ROLE_LOCK: u64 = 4;

/// Rounds simulated between drift updates (10 ms at the default round rate).
const DRIFT_BLOCK_ROUNDS: u64 = 100;

/// Independent generator for `(role, index)`, so each round's draws do not
/// depend on how rounds are spread over threads.
pub fn stream_rng(seed: u64, role: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ role.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

fn session_rounds(config: &RunConfig, plan: &SecondPlan) -> Result<(u64, f64)> {
    let rounds = match (config.total_rounds, config.duration_s) {
        (Some(r), _) => r,
        (None, Some(d)) => plan.rounds_in(d),
        (None, None) => return Err(Error::config("set total-rounds or duration-s")),
    };
    let duration = config
        .duration_s
        .unwrap_or_else(|| plan.duration_for(rounds));
    Ok((rounds, duration))
}

fn infeasible(e: Error) -> Error {
    match e {
        Error::Domain(msg) | Error::Precondition(msg) => Error::Infeasible(msg),
        other => other,
    }
}

/// Report from the security analysis alone: measured inputs in published
/// mode, closed-form channel expectations otherwise.
pub fn run_analytic(config: &RunConfig) -> Result<SessionReport> {
    config.validate()?;
    let plan = schedule(config)?;
    let (rounds, duration) = session_rounds(config, &plan)?;
    let pulses = config.pulses;
    let (gain, e_bit, sifted, per_delay) = if config.mode == Mode::Published {
        let gain = match (config.gain, config.sifted_bits) {
            (Some(q), _) => q,
            (None, Some(s)) if rounds > 0 => s as f64 / rounds as f64,
            (None, Some(_)) => 0.0,
            (None, None) => return Err(Error::config("published needs gain or sifted-bits")),
        };
        let e_bit = config
            .e_bit
            .ok_or_else(|| Error::config("published needs e-bit"))?;
        let sifted = config
            .sifted_bits
            .unwrap_or_else(|| (gain * rounds as f64).round() as u64);
        let rows = (1..pulses)
            .map(|d| DelayRow {
                d,
                sifted: 0,
                errors: 0,
                e_bit: 0.0,
            })
            .collect();
        (gain, e_bit, sifted, rows)
    } else {
        let channel = config.channel();
        let (gain, e_bit) = analytic_gain_and_error(pulses, config.mu, &channel).map_err(infeasible)?;
        let per_round = rounds as f64 / f64::from(pulses - 1);
        let rows: Vec<DelayRow> = (1..pulses)
            .map(|d| {
                let e = delay_expectation(pulses, config.mu, &channel, d);
                let sifted = (per_round * e.gain).round() as u64;
                DelayRow {
                    d,
                    sifted,
                    errors: (sifted as f64 * e.e_bit).round() as u64,
                    e_bit: e.e_bit,
                }
            })
            .collect();
        (gain, e_bit, (gain * rounds as f64).round() as u64, rows)
    };
    SessionReport::assemble(
        config.mode,
        config.seed,
        pulses,
        config.mu,
        rounds,
        sifted,
        gain,
        e_bit,
        per_delay,
        duration,
        plan.rounds_per_second as f64,
    )
}

struct RoundContext<'a> {
    seed: u64,
    pulses: u32,
    mu: f64,
    transmittance: f64,
    channel: &'a ChannelModel,
    detector: DetectorModel,
}

impl RoundContext<'_> {
    /// One full protocol round. `residual[d]` is the uncompensated
    /// interferometer phase of delay `d` at this time.
    fn run(&self, round_id: u64, residual: &[f64], ledger: &mut SessionLedger) -> Result<()> {
        let pulses = self.pulses;
        let mut alice = Alice::starting_at(
            pulses,
            RngBits::new(stream_rng(self.seed, ROLE_ALICE, round_id)),
            round_id,
        );
        let mut bob = Bob::new(pulses, RngBits::new(stream_rng(self.seed, ROLE_BOB, round_id)));
        let mut physics = stream_rng(self.seed, ROLE_CHANNEL, round_id);

        let record = alice.prepare()?;
        let train = apply_loss(&build_train(record, self.mu)?, self.transmittance)?;
        let choice = bob.choose_delay()?;
        let d = choice.d;
        let means = interferometer_output(
            &train,
            d,
            self.channel.visibility.get(d),
            residual[d as usize],
        )?;
        let clicks = sample_clicks(round_id, d, &means, &self.detector, &mut physics);
        ledger.record_round();
        let Some(click) = extract_valid(&clicks, d, pulses, &mut physics) else {
            return Ok(());
        };
        let detection = interpret_detection(click.slot, click.detector, &choice, pulses)?
            .ok_or_else(|| Error::Protocol(format!("slot {} is not an overlap slot", click.slot)))?;
        let announcement = bob.announce(round_id, &choice, &detection)?;
        let alice_bit = alice.receive(&announcement)?;
        ledger.update(&SiftedRecord {
            round_id,
            i: announcement.i,
            j: announcement.j,
            alice_bit,
            bob_bit: detection.bob_bit,
            d,
        });
        Ok(())
    }

    fn run_block(&self, rounds: std::ops::Range<u64>, residual: &[f64]) -> Result<SessionLedger> {
        rounds
            .into_par_iter()
            .try_fold(
                || SessionLedger::new(self.pulses),
                |mut ledger, r| {
                    self.run(r, residual, &mut ledger)?;
                    Ok::<_, Error>(ledger)
                },
            )
            .try_reduce(
                || SessionLedger::new(self.pulses),
                |mut a, b| {
                    a.merge(&b);
                    Ok(a)
                },
            )
    }
}

/// Monte Carlo session: every round goes through the full protocol pipeline.
/// With phase locking on, each simulated second starts with a calibration
/// window and the interferometer drifts in 10 ms steps during key rounds.
pub fn run_montecarlo(config: &RunConfig) -> Result<SessionReport> {
    let ledger = simulate_ledger(config)?;
    let plan = schedule(config)?;
    let (_, duration) = session_rounds(config, &plan)?;
    let summary = ledger.report();
    SessionReport::assemble(
        Mode::Montecarlo,
        config.seed,
        config.pulses,
        config.mu,
        summary.rounds_sent,
        summary.sifted_bits,
        summary.gain,
        summary.e_bit,
        SessionReport::rows_from_ledger(&summary),
        duration,
        plan.rounds_per_second as f64,
    )
}

/// Runs the Monte Carlo pipeline and returns the raw ledger.
pub fn simulate_ledger(config: &RunConfig) -> Result<SessionLedger> {
    let mut config = config.clone();
    config.mode = Mode::Montecarlo;
    config.validate()?;
    let seed = config.seed.ok_or_else(|| Error::config("montecarlo mode requires a seed"))?;
    let plan = schedule(&config)?;
    let (rounds, _) = session_rounds(&config, &plan)?;
    if rounds > 0 && plan.rounds_per_second == 0 {
        return Err(Error::config("schedule has no key rounds"));
    }
    let pulses = config.pulses;
    let channel = config.channel();
    let ctx = RoundContext {
        seed,
        pulses,
        mu: config.mu,
        transmittance: channel.transmittance(),
        channel: &channel,
        detector: channel.detector(),
    };

    let mut lock = if config.phase_lock {
        let mut rng = stream_rng(seed, ROLE_LOCK, u64::MAX);
        let truth = DriftState::random(config.drift(), pulses, &mut rng);
        let optics = Interferometer {
            visibility: (0..pulses).map(|d| channel.visibility.get(d)).collect(),
            throughput: vec![1.0; pulses as usize],
        };
        Some(PhaseLockLoop::new(truth, optics, config.lock()))
    } else {
        None
    };
    let static_residual: Vec<f64> = (0..pulses).map(|d| channel.phase_offset.get(d)).collect();

    let mut ledger = SessionLedger::new(pulses);
    let mut next_round = 0u64;
    let mut second = 0u64;
    let period_s = plan.round_period_us * 1e-6;
    while next_round < rounds {
        let end_of_second = (next_round + plan.rounds_per_second).min(rounds);
        match lock.as_mut() {
            Some(lock) => {
                let mut rng = stream_rng(seed, ROLE_LOCK, second);
                lock.lock(&mut rng)?;
                while next_round < end_of_second {
                    let block_end = (next_round + DRIFT_BLOCK_ROUNDS).min(end_of_second);
                    let residual: Vec<f64> = (0..pulses).map(|d| lock.residual(d)).collect();
                    ledger.merge(&ctx.run_block(next_round..block_end, &residual)?);
                    lock.truth
                        .advance((block_end - next_round) as f64 * period_s, &mut rng);
                    next_round = block_end;
                }
                lock.truth.advance(plan.idle_ms / 1000.0, &mut rng);
            }
            None => {
                ledger.merge(&ctx.run_block(next_round..end_of_second, &static_residual)?);
                next_round = end_of_second;
            }
        }
        second += 1;
    }
    Ok(ledger)
}

/// Runs `config` in its own mode.
pub fn run(config: &RunConfig) -> Result<SessionReport> {
    match config.mode {
        Mode::Montecarlo => run_montecarlo(config),
        Mode::Analytic | Mode::Published => run_analytic(config),
    }
}

/// Phase-lock loop alone for `seconds` simulated seconds. `config.visibility`
/// is the intrinsic visibility of each interferometer.
pub fn calibrate_demo(
    config: &RunConfig,
    seconds: u64,
    threshold: f64,
) -> Result<(VisibilityTrace, CalibrationTable)> {
    let mut config = config.clone();
    config.phase_lock = true;
    config.validate()?;
    let seed = config.seed.unwrap_or(0);
    let pulses = config.pulses;
    let mut rng = stream_rng(seed, ROLE_LOCK, u64::MAX);
    let truth = DriftState::random(config.drift(), pulses, &mut rng);
    let optics = Interferometer {
        visibility: (0..pulses).map(|d| config.visibility.get(d)).collect(),
        throughput: vec![1.0; pulses as usize],
    };
    let mut lock = PhaseLockLoop::new(truth, optics, config.lock());
    let qkd_s = (1000.0 - config.locking_window_ms) / 1000.0;
    let trace = track_visibility(&mut lock, seconds, qkd_s, threshold, &mut rng)?;
    Ok((trace, lock.table))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub outcome: std::result::Result<SessionReport, String>,
}

/// Re-runs `base` with `key` set to each of `values`.
pub fn sweep(base: &RunConfig, key: &str, values: &[String]) -> Result<Vec<SweepRow>> {
    let mut probe = base.clone();
    probe.set(key, values.first().map_or("0", String::as_str))?;
    values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(key, v)?;
            let outcome = match run(&cfg) {
                Ok(r) => Ok(r),
                Err(Error::Config(msg)) => return Err(Error::Config(msg)),
                Err(e) => Err(e.to_string()),
            };
            Ok(SweepRow {
                value: v.clone(),
                outcome,
            })
        })
        .collect()
}

pub fn sweep_csv(key: &str, rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{key},gain,e_bit,n_th,h_pa,rate_per_round,final_key_bits,key_rate_bps,insecure,error\n"
    );
    for row in rows {
        match &row.outcome {
            Ok(r) => {
                let n_th = r.n_th.map_or_else(String::new, |n| n.to_string());
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},",
                    row.value,
                    r.gain,
                    r.e_bit,
                    n_th,
                    r.h_pa,
                    r.rate_per_round,
                    r.final_key_bits,
                    r.key_rate_bps,
                    r.insecure
                );
            }
            Err(msg) => {
                let _ = writeln!(out, "{},,,,,,,,true,\"{}\"", row.value, msg.replace('"', "'"));
            }
        }
    }
    out
}

/// Parses `start:stop:count` (inclusive, evenly spaced) or a comma list.
pub fn parse_range(spec: &str) -> Result<Vec<String>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad range bound {s:?}")))
        };
        let (a, b) = (num(parts[0])?, num(parts[1])?);
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad range count {:?}", parts[2])))?;
        if n == 0 {
            return Err(Error::config("range count must be >= 1"));
        }
        if n == 1 {
            return Ok(vec![a.to_string()]);
        }
        return Ok((0..n)
            .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).to_string())
            .collect());
    }
    Ok(spec.split(',').map(|s| s.trim().to_string()).collect())
}
