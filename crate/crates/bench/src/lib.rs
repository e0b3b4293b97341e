//! Benchmark-only crate: see `benches/hot_paths.rs`.
