//! Stratified accuracy and ROC AUC of per-sub-path detector output against
//! ground-truth regime labels.
//!
//! Label 0 is the base regime and label 1 any changed regime. "Regime on"
//! accuracy is measured on label-0 sub-paths and "regime off" on label-1
//! sub-paths.

use serde::Serialize;

/// Output of one detector on one run, aligned with the truth labels.
/// Sub-paths without a score (e.g. outside every ensemble) are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<'a> {
    /// Continuous score for the ROC curve; larger means "more likely changed".
    pub score: &'a [Option<f64>],
    /// Hard decision: `true` predicts a changed regime.
    pub predicted: &'a [Option<bool>],
    pub truth: &'a [bool],
}

/// Decisions `score ≥ threshold`; the detectors use 0.5 on exceedance fractions.
pub fn at_threshold(score: &[Option<f64>], threshold: f64) -> Vec<Option<bool>> {
    score.iter().map(|s| s.map(|v| v >= threshold)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetrics {
    pub regime_on: Option<f64>,
    pub regime_off: Option<f64>,
    pub total: f64,
    pub auc: Option<f64>,
    pub n_base: usize,
    pub n_changed: usize,
}

/// Area under the ROC curve as the Mann-Whitney probability that a random
/// positive outscores a random negative, ties counting one half. `None` when
/// either class is empty.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mid-ranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

pub fn run_metrics(s: &Scored<'_>) -> RunMetrics {
    assert_eq!(s.score.len(), s.truth.len(), "scores and labels must be aligned");
    assert_eq!(s.predicted.len(), s.truth.len(), "decisions and labels must be aligned");
    let (mut ok_base, mut n_base, mut ok_chg, mut n_chg) = (0usize, 0usize, 0usize, 0usize);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for ((v, p), &t) in s.score.iter().zip(s.predicted).zip(s.truth) {
        let (Some(v), Some(predicted)) = (*v, *p) else { continue };
        if t {
            n_chg += 1;
            ok_chg += usize::from(predicted);
        } else {
            n_base += 1;
            ok_base += usize::from(!predicted);
        }
        scores.push(v);
        labels.push(t);
    }
    let frac = |ok: usize, n: usize| (n > 0).then(|| ok as f64 / n as f64);
    RunMetrics {
        regime_on: frac(ok_base, n_base),
        regime_off: frac(ok_chg, n_chg),
        total: frac(ok_base + ok_chg, n_base + n_chg).unwrap_or(f64::NAN),
        auc: roc_auc(&scores, &labels),
        n_base,
        n_changed: n_chg,
    }
}

/// Mean and sample standard deviation over the runs where a value exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Summary {
        let v: Vec<f64> = values.into_iter().flatten().filter(|x| x.is_finite()).collect();
        let n = v.len();
        if n == 0 {
            return Summary { mean: None, std: None, n };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Summary { mean: Some(mean), std, n }
    }

    pub fn display(&self, percent: bool) -> String {
        let k = if percent { 100.0 } else { 1.0 };
        match (self.mean, self.std) {
            (Some(m), Some(s)) if percent => format!("{:.1} ± {:.1}%", m * k, s * k),
            (Some(m), None) if percent => format!("{:.1}%", m * k),
            (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
            (Some(m), None) => format!("{m:.3}"),
            _ => "n/a".into(),
        }
    }
}

/// Metrics of one detector summarized over runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub method: String,
    pub regime_on: Summary,
    pub regime_off: Summary,
    pub total: Summary,
    pub auc: Summary,
    pub runs: Vec<RunMetrics>,
}

impl MetricsReport {
    pub fn new(method: &str, runs: Vec<RunMetrics>) -> Self {
        MetricsReport {
            method: method.to_string(),
            regime_on: Summary::of(runs.iter().map(|r| r.regime_on)),
            regime_off: Summary::of(runs.iter().map(|r| r.regime_off)),
            total: Summary::of(runs.iter().map(|r| Some(r.total))),
            auc: Summary::of(runs.iter().map(|r| r.auc)),
            runs,
        }
    }
}
