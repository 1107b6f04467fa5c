//! Driver support: random program generation, differential fuzzing and
//! compile-time benchmarks.

pub mod gen;
pub mod fuzz;
pub mod minimize;
pub mod bench;
