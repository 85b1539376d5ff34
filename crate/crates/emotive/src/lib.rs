//! File formats, benchmarking and the command line around `emotive-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod features;
pub mod model;
pub mod wav;
