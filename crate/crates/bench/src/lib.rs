//! Criterion benchmarks for the engine's hot paths live under `benches/`:
//! `cargo bench -p clab-bench`.
