//! Benchmarks live under `benches/`; run them with `cargo bench -p w2s-bench`.
