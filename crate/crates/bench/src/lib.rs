//! Criterion benchmarks for the `pathibp` hot paths; see `benches/flows.rs`.
