//! Experiment drivers: configuration, provenance-stamped CSV and SVG outputs, and one command per experiment.

pub mod commands;
pub mod config;
pub mod output;
