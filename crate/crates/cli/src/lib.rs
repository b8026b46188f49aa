//! Experiment orchestration for `sigregime`: config parsing, CSV ingestion,
//! experiment runners, accuracy metrics and report emission.

pub mod app;
pub mod config;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod metrics;
pub mod report;
