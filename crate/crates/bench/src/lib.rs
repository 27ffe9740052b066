//! Criterion benchmarks for the hot paths of `fairbandit-core`; see `benches/`.
