//! Criterion benchmarks for the Galerkin nonlinearity and time stepping;
//! see `benches/`.
