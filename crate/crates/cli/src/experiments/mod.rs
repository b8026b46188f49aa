//! Experiment runners. Each kind turns a validated [`ExperimentConfig`] into
//! in-memory [`Artifacts`]; `crate::report` writes them to disk.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::metrics::MetricsReport;

mod cluster;
pub mod common;
mod detection;
mod realdata;
mod single_path;

pub use common::Series;
pub use detection::{belief_nulls, BeliefNull};

/// Everything one experiment produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifacts {
    pub kind: ExperimentKind,
    /// Kind-specific structured results.
    pub results: serde_json::Value,
    /// Human-readable report body.
    pub text: Vec<String>,
    pub metrics: Vec<MetricsReport>,
    pub series: Vec<Series>,
    /// Wall-clock seconds by phase; kept apart from the deterministic outputs.
    pub timing: BTreeMap<String, f64>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::ToyDetect
        | ExperimentKind::Multiclass
        | ExperimentKind::RbergomiDetect
        | ExperimentKind::Rank2Compare
        | ExperimentKind::BaselineCompare => detection::run(cfg),
        ExperimentKind::SinglePath | ExperimentKind::Nonmarkov => single_path::run(cfg),
        ExperimentKind::Cluster => cluster::run(cfg),
        ExperimentKind::RealdataAuto => realdata::run_auto(cfg),
        ExperimentKind::RealdataPipeline => realdata::run_pipeline(cfg),
    }
}
