//! Criterion benchmarks for the datapath models and the cycle engine live in
//! `benches/`. This crate has no library surface of its own.
