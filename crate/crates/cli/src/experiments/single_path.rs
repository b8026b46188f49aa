//! Path-by-path similarity scoring against belief samples. The `nonmarkov`
//! kind can draw its belief samples from full-horizon simulations restricted
//! to each sub-path's time window, so path-dependent models are compared in
//! the state they would have reached by then.

use std::collections::BTreeMap;

use serde_json::json;
use sigregime_core::detect::{pathwise_detect, BeliefSampler, SimilarityReport};
use sigregime_core::models::Grid;
use sigregime_core::rng::derive_seed;
use sigregime_core::sigkernel::Prepared;
use sigregime_core::streams::{Stream, StreamTransformer};

use super::common::*;
use super::Artifacts;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::metrics::{run_metrics, MetricsReport, Scored, Summary};

struct RunOutput {
    truth: Vec<bool>,
    classes: Vec<usize>,
    spans: Vec<[String; 2]>,
    report: SimilarityReport,
    /// Row-0 minimum: positive when the sub-path is closer to every other
    /// belief than to the first.
    score: Vec<f64>,
    seconds: f64,
}

impl RunOutput {
    /// Mean score over the second half of the sub-paths minus the first half.
    fn jump(&self) -> f64 {
        let n = self.score.len();
        let mid = n / 2;
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        mean(&self.score[mid..]) - mean(&self.score[..mid])
    }
}

fn row0_min(report: &SimilarityReport) -> Vec<f64> {
    report
        .matrices
        .iter()
        .map(|m| m[0].iter().copied().fold(f64::INFINITY, f64::min))
        .collect()
}

/// Full-horizon belief paths for one run, one list per belief.
fn full_horizon_paths(cfg: &ExperimentConfig, n_obs: usize, seed: u64) -> Result<Vec<Vec<Stream>>> {
    let path = cfg.path()?;
    let beliefs = cfg.beliefs()?;
    beliefs
        .models
        .iter()
        .enumerate()
        .map(|(b, m)| {
            Ok(m.simulate(
                path.dim,
                path.x0,
                Grid::new(path.dt, n_obs - 1),
                cfg.scoring.n_samples,
                derive_seed(seed, BANK_SEED + b as u64),
            )?)
        })
        .collect()
}

fn single_run(
    cfg: &ExperimentConfig,
    phi: &StreamTransformer,
    banks: Option<&[Vec<Prepared>]>,
    run: usize,
) -> Result<RunOutput> {
    let seed = run_seed(cfg.seed, run);
    let path_cfg = cfg.path()?;
    let h1 = cfg.pipeline.h1;
    let kernel = &cfg.kernel;
    let path = simulate_path(path_cfg, h1, seed)?;
    let truth = changed_labels(&path_cfg.models, &path, h1);
    let classes = model_classes(&path_cfg.models, &path, h1);
    let (_, xs) = cut(&path.stream, h1, phi)?;
    let spans = (0..xs.len()).map(|j| span_columns(&path.stream, h1, j)).collect();
    let (report, seconds) = timed(|| {
        let prepared = kernel.prepare_all(&xs)?;
        let sample_seed = derive_seed(seed, SAMPLE_SEED);
        let report = match banks {
            Some(banks) => pathwise_detect(
                &prepared,
                &BeliefSampler::Banks(banks),
                cfg.scoring.n_samples,
                kernel,
                sample_seed,
            )?,
            None => {
                let full = full_horizon_paths(cfg, path.stream.len(), seed)?;
                let window = move |j: usize| {
                    full.iter()
                        .map(|paths| {
                            let cut = paths
                                .iter()
                                .map(|p| p.slice(j * h1..(j + 1) * h1))
                                .collect::<sigregime_core::Result<Vec<_>>>()?;
                            kernel.prepare_all(&phi.apply_all(&cut)?)
                        })
                        .collect()
                };
                pathwise_detect(
                    &prepared,
                    &BeliefSampler::Conditional(Box::new(window)),
                    cfg.scoring.n_samples,
                    kernel,
                    sample_seed,
                )?
            }
        };
        Ok(report)
    })?;
    let score = row0_min(&report);
    Ok(RunOutput {
        truth,
        classes,
        spans,
        report,
        score,
        seconds,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let phi = cfg.pipeline.transformer()?;
    let path = cfg.path()?;
    let beliefs = cfg.beliefs()?;
    let names = belief_names(cfg);
    let mut timing = BTreeMap::new();

    let banks = if cfg.scoring.windowed_banks {
        None
    } else {
        let (b, t) = timed(|| {
            beliefs
                .models
                .iter()
                .enumerate()
                .map(|(b, m)| {
                    let bank = belief_bank(
                        m,
                        path.dim,
                        path.x0,
                        path.dt,
                        cfg.pipeline.h1,
                        beliefs.bank_size.max(cfg.scoring.n_samples),
                        derive_seed(cfg.seed, BANK_SEED + b as u64),
                        &phi,
                    )?;
                    Ok(cfg.kernel.prepare_all(&bank)?)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        timing.insert("belief_banks".to_string(), t);
        Some(b)
    };

    let (runs, t) = timed(|| par_runs(cfg.n_runs, |r| single_run(cfg, &phi, banks.as_deref(), r)))?;
    timing.insert("runs".to_string(), t);
    timing.insert(
        "score/mean_per_run".to_string(),
        runs.iter().map(|r| r.seconds).sum::<f64>() / runs.len() as f64,
    );

    let per_run: Vec<_> = runs
        .iter()
        .map(|r| {
            let score: Vec<Option<f64>> = r.score.iter().map(|&s| Some(s)).collect();
            let predicted: Vec<Option<bool>> = r.score.iter().map(|&s| Some(s > 0.0)).collect();
            run_metrics(&Scored {
                score: &score,
                predicted: &predicted,
                truth: &r.truth,
            })
        })
        .collect();
    let metrics = vec![MetricsReport::new("similarity", per_run)];

    let jumps: Vec<f64> = runs.iter().map(RunOutput::jump).collect();
    let jumped = jumps.iter().filter(|&&j| j > 0.0).count();
    let jump_summary = Summary::of(jumps.iter().map(|&j| Some(j)));

    let mut series = Vec::new();
    for (r, out) in runs.iter().enumerate() {
        let k = names.len();
        let mut header: Vec<String> = ["subpath", "t_start", "t_end", "truth", "class", "score"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..k {
            for j in (0..k).filter(|&j| j != i) {
                header.push(format!("sigma_{}_{}", names[i], names[j]));
            }
        }
        for n in &names {
            header.push(format!("flag_{n}"));
        }
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut s = Series::new(format!("run-{r:03}-similarity"), &refs);
        for j in 0..out.truth.len() {
            let mut row = vec![
                j.to_string(),
                out.spans[j][0].clone(),
                out.spans[j][1].clone(),
                flag(out.truth[j]),
                out.classes[j].to_string(),
                num(out.score[j]),
            ];
            row.extend(out.report.matrices[j].iter().flatten().map(|&v| num(v)));
            row.extend(out.report.flags[j].iter().map(|&f| flag(f)));
            s.push(row);
        }
        series.push(s);
    }

    let m = &metrics[0];
    let text = vec![
        format!("experiment: {}", cfg.kind.as_str()),
        format!("runs: {}  seed: {}", cfg.n_runs, cfg.seed),
        format!(
            "beliefs: {}  samples per belief: {}  windowed banks: {}",
            names.join(", "),
            cfg.scoring.n_samples,
            cfg.scoring.windowed_banks
        ),
        String::new(),
        format!(
            "regime-on {}  regime-off {}  total {}  auc {}",
            m.regime_on.display(true),
            m.regime_off.display(true),
            m.total.display(true),
            m.auc.display(false)
        ),
        format!(
            "second-half minus first-half mean score: {:.3e} ± {:.1e}  (positive in {jumped} of {} runs)",
            jump_summary.mean.unwrap_or(f64::NAN),
            jump_summary.std.unwrap_or(0.0),
            runs.len()
        ),
    ];

    Ok(Artifacts {
        kind: cfg.kind,
        results: json!({
            "beliefs": names,
            "n_samples": cfg.scoring.n_samples,
            "windowed_banks": cfg.scoring.windowed_banks,
            "jumps": jumps,
            "runs_with_positive_jump": jumped,
            "jump": jump_summary,
        }),
        text,
        metrics,
        series,
        timing,
    })
}
