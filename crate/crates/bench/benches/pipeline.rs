use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrdps_core::harness::{simulate_ledger, Mode, RunConfig};
use rrdps_core::phase_lock::{estimate_phase, fringe_means, standard_phases};
use rrdps_core::photonics::analytic_gain_and_error;
use rrdps_core::security::{key_rate, SecurityParams};

fn security(c: &mut Criterion) {
    let params = SecurityParams::new(128, 0.8, 0.00652, 0.089).unwrap();
    c.bench_function("key_rate/L128", |b| b.iter(|| key_rate(black_box(&params))));

    let channel = RunConfig::default().channel();
    let mut group = c.benchmark_group("analytic_gain_and_error");
    for pulses in [16u32, 128, 1024] {
        group.bench_with_input(BenchmarkId::from_parameter(pulses), &pulses, |b, &l| {
            b.iter(|| analytic_gain_and_error(l, 0.8, black_box(&channel)))
        });
    }
    group.finish();
}

fn phase_estimation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let counts: Vec<(u64, u64)> = standard_phases(4)
        .iter()
        .map(|&a| {
            let (m1, m2) = fringe_means(2e4, 0.98, 1.1 + a);
            let jitter = rng.random_range(0.0..1.0);
            ((m1 + jitter) as u64, (m2 + jitter) as u64)
        })
        .collect();
    c.bench_function("estimate_phase/4_steps", |b| {
        b.iter(|| estimate_phase(black_box(&counts)))
    });
}

fn rounds(c: &mut Criterion) {
    let mut group = c.benchmark_group("montecarlo");
    group.sample_size(10);
    for pulses in [16u32, 128] {
        let cfg = RunConfig {
            pulses,
            total_loss_db: 12.0,
            mode: Mode::Montecarlo,
            seed: Some(1),
            total_rounds: Some(10_000),
            ..RunConfig::default()
        };
        group.bench_with_input(BenchmarkId::new("10k_rounds", pulses), &cfg, |b, cfg| {
            b.iter(|| simulate_ledger(cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, security, phase_estimation, rounds);
criterion_main!(benches);
