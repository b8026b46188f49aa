//! Unsupervised regime clustering of ensembles under the MMD distance.

use std::collections::BTreeMap;

use serde_json::json;
use sigregime_core::cluster::{agglomerate, assign_subpath_labels, best_permutation, distance_matrix, ClusterAssignment};
use sigregime_core::streams::{ensembles_for, EnsembleSet};

use super::common::*;
use super::Artifacts;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::metrics::Summary;

/// Majority cluster label over the ensembles containing each sub-path; ties
/// go to the lowest label.
pub(super) fn majority_labels(assignment: &ClusterAssignment, ens: &EnsembleSet) -> Vec<Option<usize>> {
    (0..ens.n_subpaths)
        .map(|i| {
            let range = ens.containing(i);
            if range.is_empty() {
                return None;
            }
            let mut votes = vec![0usize; assignment.k];
            for e in range {
                votes[assignment.labels[e]] += 1;
            }
            Some((0..votes.len()).fold(0, |a, b| if votes[b] > votes[a] { b } else { a }))
        })
        .collect()
}

struct RunOutput {
    classes: Vec<usize>,
    spans: Vec<[String; 2]>,
    mean_labels: Vec<Option<f64>>,
    /// Majority labels after the best relabeling.
    predicted: Vec<Option<usize>>,
    ensemble_labels: Vec<usize>,
    accuracy: f64,
    seconds: f64,
}

fn single_run(cfg: &ExperimentConfig, run: usize) -> Result<RunOutput> {
    let seed = run_seed(cfg.seed, run);
    let path_cfg = cfg.path()?;
    let h1 = cfg.pipeline.h1;
    let k = cfg.cluster.k;
    let phi = cfg.pipeline.transformer()?;
    let path = simulate_path(path_cfg, h1, seed)?;
    let classes = model_classes(&path_cfg.models, &path, h1);
    let (_, xs) = cut(&path.stream, h1, &phi)?;
    let spans = (0..xs.len()).map(|j| span_columns(&path.stream, h1, j)).collect();
    let ens = ensembles_for(xs.len(), cfg.pipeline.h2)?;
    let (assignment, seconds) = timed(|| {
        let prepared = cfg.kernel.prepare_all(&xs)?;
        let d = distance_matrix(&prepared, &ens, &cfg.kernel)?;
        Ok(agglomerate(&d, k, cfg.cluster.linkage)?)
    })?;
    let majority = majority_labels(&assignment, &ens);
    let (pred, truth): (Vec<usize>, Vec<usize>) = majority
        .iter()
        .zip(&classes)
        .filter_map(|(p, &t)| p.map(|p| (p, t)))
        .unzip();
    if pred.is_empty() {
        return Err(CliError::config("no sub-path lies in an ensemble"));
    }
    let n_labels = k.max(truth.iter().max().map_or(0, |m| m + 1));
    let (perm, accuracy) = best_permutation(&pred, &truth, n_labels)?;
    Ok(RunOutput {
        classes,
        spans,
        mean_labels: assign_subpath_labels(&assignment, &ens)?,
        predicted: majority.iter().map(|p| p.map(|p| perm[p])).collect(),
        ensemble_labels: assignment.labels,
        accuracy,
        seconds,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut timing = BTreeMap::new();
    let (runs, t) = timed(|| par_runs(cfg.n_runs, |r| single_run(cfg, r)))?;
    timing.insert("runs".to_string(), t);
    timing.insert(
        "cluster/mean_per_run".to_string(),
        runs.iter().map(|r| r.seconds).sum::<f64>() / runs.len() as f64,
    );
    let accuracies: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let summary = Summary::of(accuracies.iter().map(|&a| Some(a)));

    let mut series = Vec::new();
    for (r, out) in runs.iter().enumerate() {
        let mut s = Series::new(
            format!("run-{r:03}-labels"),
            &["subpath", "t_start", "t_end", "class", "mean_label", "predicted"],
        );
        for j in 0..out.classes.len() {
            s.push(vec![
                j.to_string(),
                out.spans[j][0].clone(),
                out.spans[j][1].clone(),
                out.classes[j].to_string(),
                opt(out.mean_labels[j]),
                out.predicted[j].map(|p| p.to_string()).unwrap_or_default(),
            ]);
        }
        series.push(s);
        let mut e = Series::new(format!("run-{r:03}-ensembles"), &["ensemble", "label"]);
        for (k, l) in out.ensemble_labels.iter().enumerate() {
            e.push(vec![k.to_string(), l.to_string()]);
        }
        series.push(e);
    }

    let text = vec![
        format!("experiment: {}", cfg.kind.as_str()),
        format!("runs: {}  seed: {}", cfg.n_runs, cfg.seed),
        format!(
            "clusters: {}  linkage: {}  dimension: {}",
            cfg.cluster.k,
            linkage_name(cfg.cluster.linkage),
            cfg.path()?.dim
        ),
        String::new(),
        format!("sub-path label accuracy after best relabeling: {}", summary.display(true)),
        format!(
            "worst run: {:.1}%",
            100.0 * accuracies.iter().copied().fold(f64::INFINITY, f64::min)
        ),
    ];
    Ok(Artifacts {
        kind: cfg.kind,
        results: json!({ "accuracy": summary, "accuracy_runs": accuracies }),
        text,
        metrics: Vec::new(),
        series,
        timing,
    })
}
