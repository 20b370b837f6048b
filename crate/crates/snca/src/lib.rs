//! File formats, rendering and the experiment runner for steerable neural
//! cellular automata. The numerical core lives in `snca-core`.

pub mod checkpoint;
pub mod config;
pub mod render;
pub mod run;
pub mod targets;

pub use snca_core as core;
