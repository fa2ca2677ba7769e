//! Library side of the `suremap` command-line harness; the binary in
//! `main.rs` is a thin argument-parsing wrapper over these modules.

pub mod ablate;
pub mod benchmark;
pub mod error;
pub mod estimate;
pub mod io;
pub mod methods;
pub mod rng;
pub mod simulate;
pub mod summarize;
