use std::time::Instant;

use serde::Serialize;
use sigregime_core::models::{simulate_regime_switching, simulate_schedule, Grid, Model, RegimePath, RegimeSwitchSpec};
use sigregime_core::cluster::Linkage;
use sigregime_core::rng::derive_seed;
use sigregime_core::streams::{extract_subpaths, Stream, StreamTransformer};

use crate::config::{ExperimentConfig, PathConfig};
use crate::error::{CliError, Result};

// Seed tags inside one run.
pub const PATH_SEED: u64 = 1;
pub const BANK_SEED: u64 = 100;
pub const NULL_SEED: u64 = 200;
pub const DETECT_SEED: u64 = 300;
pub const CORPUS_SEED: u64 = 400;
pub const SAMPLE_SEED: u64 = 500;

pub fn run_seed(seed: u64, run: usize) -> u64 {
    derive_seed(seed, run as u64)
}

/// A plot-ready table written as one CSV file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Series {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Series {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

/// Simulate the configured regime path with run seed `seed`.
pub fn simulate_path(path: &PathConfig, h1: usize, seed: u64) -> Result<RegimePath> {
    let seed = derive_seed(seed, PATH_SEED);
    if let Some(frac) = path.switch_at {
        let n_obs = (path.horizon / path.dt).round() as usize + 1;
        let at = ((frac * (n_obs - 1) as f64) as usize / h1) * h1;
        if at == 0 || at >= n_obs - 1 {
            return Err(CliError::config("path.switch_at leaves an empty regime"));
        }
        return Ok(simulate_schedule(
            &path.models,
            path.dim,
            path.x0,
            path.dt,
            n_obs,
            &[(0, 0), (at, 1)],
            seed,
        )?);
    }
    let spec = RegimeSwitchSpec {
        models: path.models.clone(),
        dim: path.dim,
        h1,
        entry_rate: path.entry_rate,
        exit_rate: path.exit_rate,
        mode: path.mode.clone(),
        horizon: path.horizon,
        dt: path.dt,
        x0: path.x0,
        lattice_aligned: path.lattice_aligned,
        seed,
    };
    Ok(simulate_regime_switching(&spec)?)
}

/// Per-sub-path ground truth: `true` when the majority model differs from
/// the base model.
pub fn changed_labels(models: &[Model], path: &RegimePath, h1: usize) -> Vec<bool> {
    path.subpath_labels(h1).iter().map(|&l| models[l] != models[0]).collect()
}

/// Per-sub-path class: index of the first model equal to the majority model,
/// so repeated models in the sequence share a class.
pub fn model_classes(models: &[Model], path: &RegimePath, h1: usize) -> Vec<usize> {
    path.subpath_labels(h1)
        .iter()
        .map(|&l| models.iter().position(|m| *m == models[l]).unwrap_or(l))
        .collect()
}

/// Raw sub-paths of a stream and their transformed versions.
pub fn cut(stream: &Stream, h1: usize, phi: &StreamTransformer) -> Result<(Vec<Stream>, Vec<Stream>)> {
    let raw = extract_subpaths(stream, h1)?.paths;
    let transformed = phi.apply_all(&raw)?;
    Ok((raw, transformed))
}

/// `n` transformed sub-path-shaped samples (`h1` observations) of `model`.
#[allow(clippy::too_many_arguments)]
pub fn belief_bank(
    model: &Model,
    dim: usize,
    x0: f64,
    dt: f64,
    h1: usize,
    n: usize,
    seed: u64,
    phi: &StreamTransformer,
) -> Result<Vec<Stream>> {
    let paths = model.simulate(dim, x0, Grid::new(dt, h1 - 1), n, seed)?;
    Ok(phi.apply_all(&paths)?)
}

pub fn belief_names(cfg: &ExperimentConfig) -> Vec<String> {
    match &cfg.beliefs {
        Some(b) if b.names.len() == b.models.len() => b.names.clone(),
        Some(b) => (0..b.models.len()).map(|i| format!("belief-{i}")).collect(),
        None => Vec::new(),
    }
}

/// Wall-clock seconds of `f`.
pub fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

/// Sub-path spans on the observation clock for series output.
pub fn span_columns(stream: &Stream, h1: usize, j: usize) -> [String; 2] {
    let times = stream.times();
    [num(times[j * h1]), num(times[(j + 1) * h1 - 1])]
}

/// Independent runs in parallel; the lowest-index failure wins.
pub fn par_runs<R, F>(n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    sigregime_core::exec::map_range(n, f).into_iter().collect()
}

/// Config spelling of a linkage rule.
pub fn linkage_name(l: Linkage) -> String {
    serde_json::to_value(l)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{l:?}"))
}
