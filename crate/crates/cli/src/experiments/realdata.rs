//! Runs on an ingested price table: the lagged auto-evaluator with a rolling
//! threshold, and a calibrate/cluster/score pipeline that builds two
//! non-parametric beliefs from clustered history.

use std::collections::BTreeMap;

use serde_json::json;
use sigregime_core::cluster::{agglomerate, assign_subpath_labels, distance_matrix, ClusterAssignment};
use sigregime_core::detect::{auto_evaluate, pathwise_detect, rolling_threshold, BeliefSampler};
use sigregime_core::rng::derive_seed;
use sigregime_core::streams::{ensembles_for, Stream};

use super::cluster::majority_labels;
use super::common::*;
use super::Artifacts;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::ingest::{ingest_csv, parse_timestamp, IngestOptions, PriceTable};

fn load(cfg: &ExperimentConfig) -> Result<PriceTable> {
    let d = cfg.data()?;
    ingest_csv(
        &d.csv,
        &IngestOptions {
            time_column: d.time_column.clone(),
            columns: d.columns.clone(),
            periods_per_year: d.periods_per_year,
            max_bad_fraction: d.max_bad_fraction,
        },
    )
}

/// Contiguous runs of `true` as inclusive index pairs.
fn episodes(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len() - 1));
    }
    out
}

struct Layout<'a> {
    table: &'a PriceTable,
    h1: usize,
    h2: usize,
}

impl Layout<'_> {
    fn subpath_dates(&self, j: usize) -> [String; 2] {
        [
            self.table.labels[j * self.h1].clone(),
            self.table.labels[(j + 1) * self.h1 - 1].clone(),
        ]
    }

    fn ensemble_dates(&self, k: usize) -> [String; 2] {
        [
            self.table.labels[k * self.h1].clone(),
            self.table.labels[(k + self.h2) * self.h1 - 1].clone(),
        ]
    }
}

fn episode_json(eps: &[(usize, usize)], dates: impl Fn(usize) -> [String; 2]) -> serde_json::Value {
    json!(eps
        .iter()
        .map(|&(a, b)| json!({ "from": dates(a)[0], "to": dates(b)[1], "length": b - a + 1 }))
        .collect::<Vec<_>>())
}

fn cluster_ensembles(cfg: &ExperimentConfig, xs: &[Stream]) -> Result<(ClusterAssignment, sigregime_core::streams::EnsembleSet)> {
    let ens = ensembles_for(xs.len(), cfg.pipeline.h2)?;
    let prepared = cfg.kernel.prepare_all(xs)?;
    let d = distance_matrix(&prepared, &ens, &cfg.kernel)?;
    let k = cfg.cluster.k.min(ens.len());
    Ok((agglomerate(&d, k, cfg.cluster.linkage)?, ens))
}

pub fn run_auto(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut timing = BTreeMap::new();
    let (table, t) = timed(|| load(cfg))?;
    timing.insert("ingest".to_string(), t);
    let phi = cfg.pipeline.transformer()?;
    let (h1, h2) = (cfg.pipeline.h1, cfg.pipeline.h2);
    let (_, xs) = cut(&table.stream, h1, &phi)?;
    let ens = ensembles_for(xs.len(), h2)?;
    let a = cfg.auto();

    let ((scores, rolling), t) = timed(|| {
        let prepared = cfg.kernel.prepare_all(&xs)?;
        let scores = auto_evaluate(&prepared, &ens, &a.lags, a.weights.as_deref(), &cfg.kernel, cfg.detector.estimator)?;
        let rolling = rolling_threshold(&scores, a.window, a.alpha)?;
        Ok((scores, rolling))
    })?;
    timing.insert("auto_evaluate".to_string(), t);
    let ((assignment, _), t) = timed(|| cluster_ensembles(cfg, &xs))?;
    timing.insert("cluster".to_string(), t);

    let layout = Layout { table: &table, h1, h2 };
    let eps = episodes(&rolling.flags);
    let mut ens_series = Series::new(
        "ensembles",
        &["ensemble", "from", "to", "score", "threshold", "flag", "cluster"],
    );
    for k in 0..ens.len() {
        let [from, to] = layout.ensemble_dates(k);
        ens_series.push(vec![
            k.to_string(),
            from,
            to,
            opt(scores[k]),
            opt(rolling.thresholds[k]),
            flag(rolling.flags[k]),
            assignment.labels[k].to_string(),
        ]);
    }
    let majority = majority_labels(&assignment, &ens);
    let mut sub_series = Series::new("subpaths", &["subpath", "from", "to", "cluster"]);
    for j in 0..xs.len() {
        let [from, to] = layout.subpath_dates(j);
        sub_series.push(vec![j.to_string(), from, to, majority[j].map(|l| l.to_string()).unwrap_or_default()]);
    }

    let scored = rolling.thresholds.iter().filter(|t| t.is_some()).count();
    let flagged = rolling.flags.iter().filter(|&&f| f).count();
    let mut text = vec![
        format!("experiment: {}", cfg.kind.as_str()),
        format!(
            "data: {} rows ({} to {}), {} columns",
            table.summary.rows_kept,
            table.summary.first.as_deref().unwrap_or("?"),
            table.summary.last.as_deref().unwrap_or("?"),
            table.summary.columns.len()
        ),
        format!(
            "sub-paths: {}  ensembles: {}  lags: {:?}  window: {}  alpha: {}",
            xs.len(),
            ens.len(),
            a.lags,
            a.window,
            a.alpha
        ),
        format!(
            "thresholded ensembles: {scored}  flagged: {flagged}  gamma fallbacks: {}",
            rolling.fallbacks
        ),
        String::new(),
        "flagged episodes:".to_string(),
    ];
    for &(s, e) in &eps {
        let n = e - s + 1;
        text.push(format!(
            "  {} .. {} ({n} ensemble{})",
            layout.ensemble_dates(s)[0],
            layout.ensemble_dates(e)[1],
            if n == 1 { "" } else { "s" }
        ));
    }
    if eps.is_empty() {
        text.push("  none".into());
    }
    Ok(Artifacts {
        kind: cfg.kind,
        results: json!({
            "ingest": table.summary,
            "n_subpaths": xs.len(),
            "n_ensembles": ens.len(),
            "thresholded": scored,
            "flagged": flagged,
            "flag_rate": if scored > 0 { flagged as f64 / scored as f64 } else { 0.0 },
            "gamma_fallbacks": rolling.fallbacks,
            "episodes": episode_json(&eps, |k| layout.ensemble_dates(k)),
            "cluster_sizes": (0..assignment.k).map(|c| assignment.labels.iter().filter(|&&l| l == c).count()).collect::<Vec<_>>(),
        }),
        text,
        metrics: Vec::new(),
        series: vec![ens_series, sub_series],
        timing,
    })
}

/// Relabel clusters in increasing order of the mean one-variation of their
/// members' sub-paths, so label 0 is the calmest cluster.
fn order_by_activity(assignment: &mut ClusterAssignment, ens: &sigregime_core::streams::EnsembleSet, xs: &[Stream]) {
    let k = assignment.k;
    let mut total = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (e, &l) in assignment.labels.iter().enumerate() {
        for i in ens.members(e) {
            total[l] += xs[i].one_variation();
            count[l] += 1;
        }
    }
    let mean: Vec<f64> = (0..k).map(|c| total[c] / count[c].max(1) as f64).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    for l in &mut assignment.labels {
        *l = rank[*l];
    }
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut timing = BTreeMap::new();
    let (table, t) = timed(|| load(cfg))?;
    timing.insert("ingest".to_string(), t);
    let phi = cfg.pipeline.transformer()?;
    let (h1, h2) = (cfg.pipeline.h1, cfg.pipeline.h2);
    let (_, xs) = cut(&table.stream, h1, &phi)?;

    let cal_rows = match &cfg.data()?.calibration_end {
        Some(end) => {
            let ts = parse_timestamp(end)
                .ok_or_else(|| CliError::config(format!("data.calibration_end {end:?} is not a timestamp")))?;
            table.rows_through(ts)
        }
        None => table.stream.len() / 2,
    };
    let n_cal = (cal_rows / h1).min(xs.len());
    if n_cal <= h2 {
        return Err(CliError::data(format!(
            "calibration period holds {n_cal} sub-paths, need more than h2 = {h2}"
        )));
    }
    let cal = &xs[..n_cal];
    let ((mut assignment, ens), t) = timed(|| cluster_ensembles(cfg, cal))?;
    timing.insert("cluster".to_string(), t);
    order_by_activity(&mut assignment, &ens, cal);
    let mean_labels = assign_subpath_labels(&assignment, &ens)?;

    let calm_max = cfg.cluster.calm_max_label;
    let mut calm = Vec::new();
    let mut stressed = Vec::new();
    for (j, l) in mean_labels.iter().enumerate() {
        if let Some(l) = l {
            if *l <= calm_max {
                calm.push(cal[j].clone());
            } else {
                stressed.push(cal[j].clone());
            }
        }
    }
    let n_samples = cfg.scoring.n_samples.min(calm.len()).min(stressed.len());
    if n_samples < 2 {
        return Err(CliError::data(format!(
            "calibration split gave {} calm and {} stressed sub-paths; each belief needs at least 2",
            calm.len(),
            stressed.len()
        )));
    }
    let (report, t) = timed(|| {
        let banks = vec![cfg.kernel.prepare_all(&calm)?, cfg.kernel.prepare_all(&stressed)?];
        let prepared = cfg.kernel.prepare_all(&xs)?;
        let sampler = BeliefSampler::Banks(&banks);
        let report = pathwise_detect(&prepared, &sampler, n_samples, &cfg.kernel, derive_seed(cfg.seed, SAMPLE_SEED))?;
        Ok(report)
    })?;
    timing.insert("score".to_string(), t);
    let sigma = report.primary_series();
    let stressed_flags: Vec<bool> = sigma.iter().map(|&s| s > 0.0).collect();

    let layout = Layout { table: &table, h1, h2 };
    let mut s = Series::new(
        "subpaths",
        &["subpath", "from", "to", "calibration", "mean_label", "similarity", "stressed"],
    );
    for j in 0..xs.len() {
        let [from, to] = layout.subpath_dates(j);
        s.push(vec![
            j.to_string(),
            from,
            to,
            flag(j < n_cal),
            mean_labels.get(j).copied().flatten().map(num).unwrap_or_default(),
            num(sigma[j]),
            flag(stressed_flags[j]),
        ]);
    }
    let out_of_sample = &stressed_flags[n_cal..];
    let oos_rate = if out_of_sample.is_empty() {
        None
    } else {
        Some(out_of_sample.iter().filter(|&&f| f).count() as f64 / out_of_sample.len() as f64)
    };
    let eps = episodes(&stressed_flags);
    let mut text = vec![
        format!("experiment: {}", cfg.kind.as_str()),
        format!(
            "data: {} rows ({} to {}), calibration through row {cal_rows}",
            table.summary.rows_kept,
            table.summary.first.as_deref().unwrap_or("?"),
            table.summary.last.as_deref().unwrap_or("?"),
        ),
        format!(
            "calibration sub-paths: {n_cal}  clusters: {}  linkage: {}",
            assignment.k, linkage_name(cfg.cluster.linkage)
        ),
        format!(
            "calm belief: {} sub-paths  stressed belief: {} sub-paths  samples per belief: {n_samples}",
            calm.len(),
            stressed.len()
        ),
        format!(
            "out-of-sample stressed share: {}",
            oos_rate.map_or("n/a".into(), |r| format!("{:.1}%", 100.0 * r))
        ),
        String::new(),
        "stressed episodes:".to_string(),
    ];
    for &(a, b) in &eps {
        text.push(format!(
            "  {} .. {} ({} sub-paths)",
            layout.subpath_dates(a)[0],
            layout.subpath_dates(b)[1],
            b - a + 1
        ));
    }
    Ok(Artifacts {
        kind: cfg.kind,
        results: json!({
            "ingest": table.summary,
            "calibration_rows": cal_rows,
            "calibration_subpaths": n_cal,
            "calm": calm.len(),
            "stressed": stressed.len(),
            "n_samples": n_samples,
            "out_of_sample_stressed_share": oos_rate,
            "episodes": episode_json(&eps, |j| layout.subpath_dates(j)),
        }),
        text,
        metrics: Vec::new(),
        series: vec![s],
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episodes_are_maximal_runs() {
        assert_eq!(episodes(&[false, true, true, false, true]), vec![(1, 2), (4, 4)]);
        assert!(episodes(&[false, false]).is_empty());
    }
}
