//! Simulation, file formats and the experiment command line for streaming
//! sparse GLM estimation. The estimators live in `streamsparse_core`.

pub mod cli;
pub mod config;
pub mod output;
pub mod run;
pub mod sim;
pub mod svg;
