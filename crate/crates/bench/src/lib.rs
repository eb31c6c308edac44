//! Criterion benchmarks for the RRDPS toolkit live under `benches/`.
