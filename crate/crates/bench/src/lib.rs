//! Benchmarks live in `benches/`; run with `cargo bench -p her2kit-bench`.
