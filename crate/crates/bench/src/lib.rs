//! Criterion benchmarks for the training and explanation pipeline; see `benches/`.
