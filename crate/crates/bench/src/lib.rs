//! Criterion benchmarks for the OCP kernels; see `benches/`.
