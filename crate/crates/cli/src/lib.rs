//! Library side of the `rfim-lab` binary: config loading, sweeps and report files.

pub mod config;
pub mod output;
pub mod sweep;
