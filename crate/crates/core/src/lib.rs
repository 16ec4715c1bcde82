//! Continual curation of individual identities.

pub mod config;
pub mod dataset;
pub mod engine;
pub mod eventlog;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod sim;
