//! Criterion benchmarks for the gatgan crate; see `benches/`.
