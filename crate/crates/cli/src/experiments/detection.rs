//! Ensemble detection against simulated belief banks, with optional
//! comparison detectors (truncated or rank-2 kernels, SIG-CON) and the
//! lagged auto-evaluator.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::json;
use sigregime_core::baselines::sigcon_detect;
use sigregime_core::detect::{auto_evaluate, detect_online, rolling_threshold, Beliefs, DetectionReport};
use sigregime_core::mmd::{bootstrap_null, NullDistribution};
use sigregime_core::models::Model;
use sigregime_core::rng::derive_seed;
use sigregime_core::sigkernel::{KernelSpec, Prepared};
use sigregime_core::streams::{ensembles_for, EnsembleSet, Stream, StreamTransformer};

use super::common::*;
use super::Artifacts;
use crate::config::{ExperimentConfig, ExperimentKind, MethodConfig};
use crate::error::Result;
use crate::metrics::{at_threshold, run_metrics, MetricsReport, RunMetrics, Scored, Summary};

/// Decision threshold on the share of flagged ensembles containing a sub-path.
const EXCEEDANCE_CUT: f64 = 0.5;

/// Bootstrap null of one belief bank under one kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefNull {
    pub belief: String,
    pub method: String,
    pub null: NullDistribution,
}

/// Transformed belief banks, one per belief model. Bank `b` is seeded from
/// the experiment seed alone, so every run and method sees the same banks.
fn simulate_banks(cfg: &ExperimentConfig, phi: &StreamTransformer) -> Result<Vec<Vec<Stream>>> {
    let beliefs = cfg.beliefs()?;
    let path = cfg.path()?;
    beliefs
        .models
        .iter()
        .enumerate()
        .map(|(b, m)| {
            belief_bank(
                m,
                path.dim,
                path.x0,
                path.dt,
                cfg.pipeline.h1,
                beliefs.bank_size,
                derive_seed(cfg.seed, BANK_SEED + b as u64),
                phi,
            )
        })
        .collect()
}

struct MmdMethod {
    name: String,
    kernel: KernelSpec,
    beliefs: Beliefs,
    nulls: Vec<NullDistribution>,
}

fn prepare_mmd(
    cfg: &ExperimentConfig,
    name: &str,
    kernel: &KernelSpec,
    banks: &[Vec<Stream>],
) -> Result<MmdMethod> {
    let d = &cfg.detector;
    let mut prepared = Vec::with_capacity(banks.len());
    let mut nulls = Vec::with_capacity(banks.len());
    for (b, bank) in banks.iter().enumerate() {
        let p = kernel.prepare_all(bank)?;
        // The null seed ignores the method so comparisons share bootstrap draws.
        let null = bootstrap_null(
            &p,
            cfg.pipeline.h2,
            d.null_draws,
            kernel,
            d.estimator,
            d.alpha,
            derive_seed(cfg.seed, NULL_SEED + b as u64),
        )?;
        prepared.push(p);
        nulls.push(null);
    }
    let mut beliefs = Beliefs::new(prepared);
    beliefs.names = belief_names(cfg);
    Ok(MmdMethod {
        name: name.to_string(),
        kernel: kernel.clone(),
        beliefs,
        nulls,
    })
}

/// Bootstrap nulls of every belief bank under every MMD method.
pub fn belief_nulls(cfg: &ExperimentConfig) -> Result<Vec<BeliefNull>> {
    let phi = cfg.pipeline.transformer()?;
    let banks = simulate_banks(cfg, &phi)?;
    let names = belief_names(cfg);
    let mut out = Vec::new();
    for m in cfg.resolved_methods() {
        if let MethodConfig::Mmd { name, kernel } = m {
            let mm = prepare_mmd(cfg, &name, &kernel, &banks)?;
            for (b, null) in mm.nulls.into_iter().enumerate() {
                out.push(BeliefNull {
                    belief: names[b].clone(),
                    method: name.clone(),
                    null,
                });
            }
        }
    }
    Ok(out)
}

enum Method {
    Mmd(MmdMethod),
    Sigcon {
        name: String,
        order: usize,
        include_time: bool,
        corpus: Vec<Stream>,
    },
}

impl Method {
    fn name(&self) -> &str {
        match self {
            Method::Mmd(m) => &m.name,
            Method::Sigcon { name, .. } => name,
        }
    }
}

/// Per-sub-path output of one detector on one run.
struct Decisions {
    score: Vec<Option<f64>>,
    predicted: Vec<Option<bool>>,
}

struct MethodRun {
    decisions: Decisions,
    /// Per-belief exceedance decisions for multi-belief MMD methods.
    per_belief: Vec<Decisions>,
    detection: Option<DetectionReport>,
    seconds: f64,
}

struct AutoRun {
    scores: Vec<Option<f64>>,
    thresholds: Vec<Option<f64>>,
    flags: Vec<bool>,
    decisions: Decisions,
    fallbacks: usize,
}

struct RunOutput {
    truth: Vec<bool>,
    classes: Vec<usize>,
    spans: Vec<[String; 2]>,
    methods: Vec<MethodRun>,
    auto: Option<AutoRun>,
    n_ensembles: usize,
}

fn exceedance_decisions(exceedance: Vec<Option<f64>>) -> Decisions {
    let predicted = at_threshold(&exceedance, EXCEEDANCE_CUT);
    Decisions {
        score: exceedance,
        predicted,
    }
}

fn run_mmd(m: &MmdMethod, cfg: &ExperimentConfig, xs: &[Stream], ens: &EnsembleSet, seed: u64) -> Result<MethodRun> {
    let (out, seconds) = timed(|| {
        let prepared = m.kernel.prepare_all(xs)?;
        let report = detect_online(
            &prepared,
            ens,
            &m.beliefs,
            &m.nulls,
            cfg.detector.n_evals,
            &m.kernel,
            cfg.detector.estimator,
            derive_seed(seed, DETECT_SEED),
        )?;
        Ok((prepared, report))
    })?;
    let (_, report) = out;
    let per_belief = if m.beliefs.len() > 1 {
        report
            .flags
            .iter()
            .map(|f| exceedance_decisions(DetectionReport::per_subpath(ens, |k| f64::from(u8::from(f[k])))))
            .collect()
    } else {
        Vec::new()
    };
    Ok(MethodRun {
        decisions: exceedance_decisions(report.exceedance.clone()),
        per_belief,
        detection: Some(report),
        seconds,
    })
}

fn run_auto(cfg: &ExperimentConfig, kernel: &KernelSpec, prepared: &[Prepared], ens: &EnsembleSet) -> Result<AutoRun> {
    let a = cfg.auto();
    let scores = auto_evaluate(
        prepared,
        ens,
        &a.lags,
        a.weights.as_deref(),
        kernel,
        cfg.detector.estimator,
    )?;
    let rolling = rolling_threshold(&scores, a.window, a.alpha)?;
    let flags = rolling.flags.clone();
    let decisions = exceedance_decisions(DetectionReport::per_subpath(ens, |k| f64::from(u8::from(flags[k]))));
    Ok(AutoRun {
        scores,
        thresholds: rolling.thresholds,
        flags,
        decisions,
        fallbacks: rolling.fallbacks,
    })
}

fn single_run(cfg: &ExperimentConfig, methods: &[Method], phi: &StreamTransformer, run: usize) -> Result<RunOutput> {
    let seed = run_seed(cfg.seed, run);
    let path_cfg = cfg.path()?;
    let h1 = cfg.pipeline.h1;
    let path = simulate_path(path_cfg, h1, seed)?;
    let truth = changed_labels(&path_cfg.models, &path, h1);
    let classes = model_classes(&path_cfg.models, &path, h1);
    let (_, xs) = cut(&path.stream, h1, phi)?;
    let ens = ensembles_for(xs.len(), cfg.pipeline.h2)?;
    let spans = (0..xs.len()).map(|j| span_columns(&path.stream, h1, j)).collect();
    let mut runs = Vec::with_capacity(methods.len());
    for m in methods {
        let r = match m {
            Method::Mmd(mm) => run_mmd(mm, cfg, &xs, &ens, seed)?,
            Method::Sigcon {
                order,
                include_time,
                corpus,
                ..
            } => {
                let (rep, seconds) = timed(|| {
                    Ok(sigcon_detect(
                        &xs,
                        corpus,
                        *order,
                        cfg.detector.alpha,
                        *include_time,
                        derive_seed(seed, DETECT_SEED),
                    )?)
                })?;
                MethodRun {
                    decisions: Decisions {
                        score: rep.scores.iter().map(|&s| Some(s)).collect(),
                        predicted: rep.flags.iter().map(|&f| Some(f)).collect(),
                    },
                    per_belief: Vec::new(),
                    detection: None,
                    seconds,
                }
            }
        };
        runs.push(r);
    }
    let auto = match (&cfg.auto, methods.first()) {
        (Some(_), Some(Method::Mmd(mm))) => {
            let prepared = mm.kernel.prepare_all(&xs)?;
            Some(run_auto(cfg, &mm.kernel, &prepared, &ens)?)
        }
        _ => None,
    };
    Ok(RunOutput {
        truth,
        classes,
        spans,
        methods: runs,
        auto,
        n_ensembles: ens.len(),
    })
}

/// Belief index whose model drives each class, for multi-belief runs.
fn class_to_belief(path_models: &[Model], belief_models: &[Model]) -> Vec<Option<usize>> {
    path_models
        .iter()
        .map(|m| belief_models.iter().position(|b| b == m))
        .collect()
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let phi = cfg.pipeline.transformer()?;
    let mut timing = BTreeMap::new();
    let (banks, t) = timed(|| simulate_banks(cfg, &phi))?;
    timing.insert("belief_banks".to_string(), t);

    let mut methods = Vec::new();
    for mc in cfg.resolved_methods() {
        let (m, t) = timed(|| match &mc {
            MethodConfig::Mmd { name, kernel } => Ok(Method::Mmd(prepare_mmd(cfg, name, kernel, &banks)?)),
            MethodConfig::Sigcon {
                name,
                order,
                corpus_size,
                include_time,
            } => {
                let path = cfg.path()?;
                let corpus = belief_bank(
                    &cfg.beliefs()?.models[0],
                    path.dim,
                    path.x0,
                    path.dt,
                    cfg.pipeline.h1,
                    *corpus_size,
                    derive_seed(cfg.seed, CORPUS_SEED),
                    &phi,
                )?;
                Ok(Method::Sigcon {
                    name: name.clone(),
                    order: *order,
                    include_time: *include_time,
                    corpus,
                })
            }
        })?;
        timing.insert(format!("calibrate/{}", m.name()), t);
        methods.push(m);
    }

    let (runs, t) = timed(|| par_runs(cfg.n_runs, |r| single_run(cfg, &methods, &phi, r)))?;
    timing.insert("runs".to_string(), t);
    for (i, m) in methods.iter().enumerate() {
        let secs: Vec<f64> = runs.iter().map(|r| r.methods[i].seconds).collect();
        timing.insert(format!("detect/{}/mean_per_run", m.name()), secs.iter().sum::<f64>() / secs.len() as f64);
    }

    let names = belief_names(cfg);
    let path_models = &cfg.path()?.models;
    let belief_map = class_to_belief(path_models, &cfg.beliefs()?.models);
    let multi = names.len() > 1;

    let metrics_of = |d: &dyn Fn(&RunOutput) -> &Decisions| -> Vec<RunMetrics> {
        runs.iter()
            .map(|r| {
                let dec = d(r);
                run_metrics(&Scored {
                    score: &dec.score,
                    predicted: &dec.predicted,
                    truth: &r.truth,
                })
            })
            .collect()
    };

    let mut metrics = Vec::new();
    let mut method_results = Vec::new();
    let mut classification = Vec::new();
    for (i, m) in methods.iter().enumerate() {
        metrics.push(MetricsReport::new(m.name(), metrics_of(&|r| &r.methods[i].decisions)));
        let mut extra = json!({ "method": m.name() });
        if let Method::Mmd(mm) = m {
            if multi {
                for (b, name) in names.iter().enumerate() {
                    metrics.push(MetricsReport::new(
                        &format!("{}/{}", m.name(), name),
                        metrics_of(&|r| &r.methods[i].per_belief[b]),
                    ));
                }
                let acc: Vec<Option<f64>> = runs
                    .iter()
                    .map(|r| classification_accuracy(r, i, &belief_map, cfg.pipeline.h2))
                    .collect();
                let summary = Summary::of(acc.iter().copied());
                classification.push((m.name().to_string(), summary));
                extra["belief_classification"] = json!(summary);
                extra["belief_classification_runs"] = json!(acc);
            }
            extra["critical"] = json!(mm.nulls.iter().map(|n| n.critical).collect::<Vec<_>>());
            extra["null_mean"] = json!(mm.nulls.iter().map(|n| n.mean()).collect::<Vec<_>>());
        }
        method_results.push(extra);
    }
    let mut auto_result = serde_json::Value::Null;
    if runs.iter().all(|r| r.auto.is_some()) && cfg.auto.is_some() {
        metrics.push(MetricsReport::new("auto", metrics_of(&|r| &r.auto.as_ref().expect("checked").decisions)));
        let fallbacks: Vec<usize> = runs.iter().map(|r| r.auto.as_ref().expect("checked").fallbacks).collect();
        auto_result = json!({ "lags": cfg.auto().lags, "window": cfg.auto().window, "gamma_fallbacks": fallbacks });
    }

    let mut series = Vec::new();
    for (r, out) in runs.iter().enumerate() {
        series.push(subpath_series(r, out, &methods, &names));
        for (i, m) in methods.iter().enumerate() {
            if let Some(rep) = &out.methods[i].detection {
                series.push(ensemble_series(r, m.name(), rep, &names));
            }
        }
        if let Some(a) = &out.auto {
            let mut s = Series::new(format!("run-{r:03}-auto"), &["ensemble", "score", "threshold", "flag"]);
            for k in 0..a.scores.len() {
                s.push(vec![k.to_string(), opt(a.scores[k]), opt(a.thresholds[k]), flag(a.flags[k])]);
            }
            series.push(s);
        }
    }

    let n_sub = runs.first().map_or(0, |r| r.truth.len());
    let changed_share = Summary::of(
        runs.iter()
            .map(|r| Some(r.truth.iter().filter(|&&t| t).count() as f64 / r.truth.len() as f64)),
    );
    let mut text = vec![
        format!("experiment: {}", cfg.kind.as_str()),
        format!("runs: {}  seed: {}", cfg.n_runs, cfg.seed),
        format!(
            "sub-paths per run: {n_sub}  ensembles per run: {}  changed share: {}",
            runs.first().map_or(0, |r| r.n_ensembles),
            changed_share.display(true)
        ),
        format!("beliefs: {}", names.join(", ")),
        String::new(),
        format!("{:<24} {:>16} {:>16} {:>16} {:>14}", "method", "regime-on", "regime-off", "total", "auc"),
    ];
    for m in &metrics {
        text.push(format!(
            "{:<24} {:>16} {:>16} {:>16} {:>14}",
            m.method,
            m.regime_on.display(true),
            m.regime_off.display(true),
            m.total.display(true),
            m.auc.display(false)
        ));
    }
    for (name, summary) in &classification {
        text.push(format!("{name}: belief classification accuracy {}", summary.display(true)));
    }
    if cfg.kind == ExperimentKind::Rank2Compare || cfg.kind == ExperimentKind::BaselineCompare {
        text.push(String::new());
        text.push(format!("ordering by mean total accuracy: {}", ordering(&metrics, &methods)));
    }

    Ok(Artifacts {
        kind: cfg.kind,
        results: json!({
            "n_subpaths": n_sub,
            "changed_share": changed_share,
            "beliefs": names,
            "methods": method_results,
            "auto": auto_result,
        }),
        text,
        metrics,
        series,
        timing,
    })
}

fn ordering(metrics: &[MetricsReport], methods: &[Method]) -> String {
    let mut v: Vec<(&str, f64)> = methods
        .iter()
        .filter_map(|m| {
            metrics
                .iter()
                .find(|r| r.method == m.name())
                .and_then(|r| r.total.mean.map(|t| (m.name(), t)))
        })
        .collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1));
    v.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(" > ")
}

/// Share of sub-paths whose majority best-matching belief is the belief of
/// their true model; sub-paths outside every ensemble or driven by a model
/// absent from the beliefs are skipped.
fn classification_accuracy(r: &RunOutput, method: usize, belief_map: &[Option<usize>], h2: usize) -> Option<f64> {
    let rep = r.methods[method].detection.as_ref()?;
    let best = rep.best_belief();
    let ens = ensembles_for(r.truth.len(), h2).ok()?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (i, &class) in r.classes.iter().enumerate() {
        let Some(want) = belief_map[class] else { continue };
        let range = ens.containing(i);
        if range.is_empty() {
            continue;
        }
        let mut votes = vec![0usize; rep.scores.len()];
        for k in range {
            votes[best[k]] += 1;
        }
        // Ties resolve to the lowest belief index.
        let got = (0..votes.len()).fold(0, |a, b| if votes[b] > votes[a] { b } else { a });
        n += 1;
        hit += usize::from(got == want);
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

fn subpath_series(r: usize, out: &RunOutput, methods: &[Method], names: &[String]) -> Series {
    let mut header: Vec<String> = ["subpath", "t_start", "t_end", "truth", "class"].iter().map(|s| s.to_string()).collect();
    for (i, m) in methods.iter().enumerate() {
        header.push(format!("{}_score", m.name()));
        header.push(format!("{}_flag", m.name()));
        for b in 0..out.methods[i].per_belief.len() {
            header.push(format!("{}_{}_exceedance", m.name(), names[b]));
        }
    }
    if out.auto.is_some() {
        header.push("auto_exceedance".into());
        header.push("auto_flag".into());
    }
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut s = Series::new(format!("run-{r:03}-subpaths"), &refs);
    let flag_opt = |p: Option<bool>| p.map(flag).unwrap_or_default();
    for j in 0..out.truth.len() {
        let mut row = vec![
            j.to_string(),
            out.spans[j][0].clone(),
            out.spans[j][1].clone(),
            flag(out.truth[j]),
            out.classes[j].to_string(),
        ];
        for mr in &out.methods {
            row.push(opt(mr.decisions.score[j]));
            row.push(flag_opt(mr.decisions.predicted[j]));
            for pb in &mr.per_belief {
                row.push(opt(pb.score[j]));
            }
        }
        if let Some(a) = &out.auto {
            row.push(opt(a.decisions.score[j]));
            row.push(flag_opt(a.decisions.predicted[j]));
        }
        s.push(row);
    }
    s
}

fn ensemble_series(r: usize, method: &str, rep: &DetectionReport, names: &[String]) -> Series {
    let mut header = vec!["ensemble".to_string()];
    for n in names {
        header.push(format!("{n}_score"));
        header.push(format!("{n}_critical"));
        header.push(format!("{n}_quantile"));
    }
    header.push("anomalous".into());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut s = Series::new(format!("run-{r:03}-{method}-ensembles"), &refs);
    for k in 0..rep.anomalous.len() {
        let mut row = vec![k.to_string()];
        for b in 0..rep.scores.len() {
            row.push(num(rep.scores[b][k]));
            row.push(num(rep.critical[b]));
            row.push(num(rep.quantiles[b][k]));
        }
        row.push(flag(rep.anomalous[k]));
        s.push(row);
    }
    s
}
