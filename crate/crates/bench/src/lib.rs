//! Benchmark-only crate; the actual measurements live in `benches/`.
