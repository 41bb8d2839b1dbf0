//! Command-line harness for the simulation-backed learning and control
//! pipeline: data collection, training, open-loop evaluation, closed-loop
//! tracking and altitude sweeps.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod report;
