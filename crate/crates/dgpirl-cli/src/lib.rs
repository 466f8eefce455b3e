//! Experiment harness for the dgpirl library: configuration, runner,
//! reporting and chart emission. The `dgpirl` binary is a thin CLI over
//! these pieces.

pub mod config;
pub mod report;
pub mod runner;
pub mod svg;
