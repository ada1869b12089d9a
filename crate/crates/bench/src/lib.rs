//! Criterion benchmarks for lumina-core live under `benches/`.
