//! Experiment runner: seeded Monte-Carlo batches and CSV reports.

pub mod command;
pub mod output;
pub mod runner;
