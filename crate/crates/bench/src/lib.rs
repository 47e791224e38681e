//! Criterion benchmarks for the geonet crates; see `benches/`.
