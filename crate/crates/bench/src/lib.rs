//! Criterion benchmarks for the `glss` kernels live in `benches/`.
