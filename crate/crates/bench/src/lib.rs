//! Criterion benchmarks for racemag-core live in `benches/`.
