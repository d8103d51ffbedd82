//! Criterion benchmarks for the lumitomo kernels. See `benches/kernels.rs`.
