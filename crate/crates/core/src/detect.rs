//! Online regime detectors.
//!
//! Three detectors share the sub-path/ensemble layout from [`crate::streams`]:
//!
//! * [`detect_online`] scores each ensemble against samples from parametric
//!   belief banks and flags it when the score beats every belief's critical
//!   value;
//! * [`auto_evaluate`] with [`rolling_threshold`] compares each ensemble with
//!   lagged ensembles of the same stream and thresholds against a Gamma fit to
//!   the trailing scores;
//! * [`pathwise_detect`] scores every single sub-path with the similarity
//!   matrix.
//!
//! Every per-ensemble random draw is keyed by the ensemble index, so removing
//! future observations never changes an earlier score.

use rand::seq::index::sample;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::mmd::{indexed_sums, order_statistic, Estimator, GammaFit, NullDistribution};
use crate::rng::{derive_seed, stream_rng};
use crate::scoring::{draw_samples, similarity_from_samples, ScoringSample};
use crate::sigkernel::{KernelSpec, Prepared};
use crate::streams::EnsembleSet;

/// Kernel values `k(i, j)` for `|i − j| < width` over a sequence of paths.
#[derive(Debug, Clone)]
pub struct BandGram {
    width: usize,
    n: usize,
    data: Vec<f64>,
}

impl BandGram {
    pub fn new(paths: &[Prepared], width: usize, spec: &KernelSpec) -> Result<Self> {
        let n = paths.len();
        let width = width.max(1);
        let data = exec::try_map_range(n * width, |e| {
            let (i, d) = (e / width, e % width);
            if i + d < n {
                spec.eval(&paths[i], &paths[i + d])
            } else {
                Ok(f64::NAN)
            }
        })?;
        Ok(BandGram { width, n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Panics when the pair lies outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        assert!(b - a < self.width && b < self.n, "pair ({i}, {j}) outside the band");
        self.data[a * self.width + (b - a)]
    }
}

/// `k` belief banks of prepared sub-paths.
#[derive(Debug, Clone, Default)]
pub struct Beliefs {
    pub banks: Vec<Vec<Prepared>>,
    pub names: Vec<String>,
}

impl Beliefs {
    pub fn new(banks: Vec<Vec<Prepared>>) -> Self {
        let names = (0..banks.len()).map(|i| format!("belief-{i}")).collect();
        Beliefs { banks, names }
    }

    pub fn len(&self) -> usize {
        self.banks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.banks.is_empty()
    }
}

fn draw_indices(bank_len: usize, h2: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, stream);
    sample(&mut rng, bank_len, h2).into_vec()
}

/// Averaged MMD of one ensemble against `n_evals` draws of `h2` paths from
/// each belief bank.
pub fn score_vector(
    ensemble: &[&Prepared],
    beliefs: &Beliefs,
    n_evals: usize,
    h2: usize,
    spec: &KernelSpec,
    est: Estimator,
    seed: u64,
) -> Result<Vec<f64>> {
    let xx = within_sums(ensemble, spec, est)?;
    belief_scores(ensemble, xx, beliefs, n_evals, h2, spec, est, seed)
}

fn within_sums(paths: &[&Prepared], spec: &KernelSpec, est: Estimator) -> Result<(f64, f64)> {
    let mut upper = 0.0;
    let mut diag = 0.0;
    for (a, &p) in paths.iter().enumerate() {
        if est == Estimator::Biased {
            diag += spec.eval(p, p)?;
        }
        for &q in &paths[a + 1..] {
            upper += spec.eval(p, q)?;
        }
    }
    Ok((upper, diag))
}

#[allow(clippy::too_many_arguments)]
fn belief_scores(
    ensemble: &[&Prepared],
    xx: (f64, f64),
    beliefs: &Beliefs,
    n_evals: usize,
    h2: usize,
    spec: &KernelSpec,
    est: Estimator,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_evals == 0 {
        return Err(Error::arg("n_evals must be positive"));
    }
    let mut out = Vec::with_capacity(beliefs.len());
    for (b, bank) in beliefs.banks.iter().enumerate() {
        if bank.len() < h2 {
            return Err(Error::arg(format!("belief bank {b} holds {} paths, fewer than h2 = {h2}", bank.len())));
        }
        let mut acc = 0.0;
        for l in 0..n_evals {
            let idx = draw_indices(bank.len(), h2, seed, (b * n_evals + l) as u64);
            let ys: Vec<&Prepared> = idx.iter().map(|&i| &bank[i]).collect();
            let (yy_upper, yy_diag) = within_sums(&ys, spec, est)?;
            let mut xy = 0.0;
            for &x in ensemble {
                for &y in &ys {
                    xy += spec.eval(x, y)?;
                }
            }
            let sums = crate::mmd::BlockSums {
                n: ensemble.len(),
                m: h2,
                xx_upper: xx.0,
                xx_diag: xx.1,
                yy_upper,
                yy_diag,
                xy,
            };
            acc += sums.estimate(est)?;
        }
        out.push(acc / n_evals as f64);
    }
    Ok(out)
}

/// Output of the belief-based online detector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    /// `scores[b][k]`: averaged MMD of ensemble `k` against belief `b`.
    pub scores: Vec<Vec<f64>>,
    pub critical: Vec<f64>,
    /// `flags[b][k]`: ensemble `k` fails the test against belief `b`.
    pub flags: Vec<Vec<bool>>,
    /// Ensemble fails against every belief.
    pub anomalous: Vec<bool>,
    /// Per sub-path share of containing ensembles flagged anomalous; `None`
    /// for sub-paths in no ensemble.
    pub exceedance: Vec<Option<f64>>,
    /// `quantiles[b][k]`: null distribution function of belief `b` at the score.
    pub quantiles: Vec<Vec<f64>>,
}

impl DetectionReport {
    /// Index of the belief with the lowest null quantile for each ensemble.
    pub fn best_belief(&self) -> Vec<usize> {
        let n = self.anomalous.len();
        (0..n)
            .map(|k| {
                (0..self.quantiles.len())
                    .min_by(|&a, &b| self.quantiles[a][k].total_cmp(&self.quantiles[b][k]))
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Per sub-path mean over containing ensembles of `value(k)`.
    pub fn per_subpath(ensembles: &EnsembleSet, value: impl Fn(usize) -> f64) -> Vec<Option<f64>> {
        (0..ensembles.n_subpaths)
            .map(|i| {
                let r = ensembles.containing(i);
                if r.is_empty() {
                    None
                } else {
                    let n = r.len() as f64;
                    Some(r.map(&value).sum::<f64>() / n)
                }
            })
            .collect()
    }
}

/// Parametric-beliefs MMD detector over a stream's sub-paths.
#[allow(clippy::too_many_arguments)]
pub fn detect_online(
    subpaths: &[Prepared],
    ensembles: &EnsembleSet,
    beliefs: &Beliefs,
    nulls: &[NullDistribution],
    n_evals: usize,
    spec: &KernelSpec,
    est: Estimator,
    seed: u64,
) -> Result<DetectionReport> {
    if beliefs.is_empty() {
        return Err(Error::arg("detector needs at least one belief"));
    }
    if nulls.len() != beliefs.len() {
        return Err(Error::arg(format!("{} nulls for {} beliefs", nulls.len(), beliefs.len())));
    }
    if subpaths.len() != ensembles.n_subpaths {
        return Err(Error::shape("ensemble layout does not match the sub-path count"));
    }
    let h2 = ensembles.h2;
    let band = BandGram::new(subpaths, h2, spec)?;
    let per_ensemble = exec::try_map_range(ensembles.len(), |k| {
        let members: Vec<usize> = ensembles.members(k).collect();
        let s = indexed_sums(&members, &[], &|i, j| band.get(i, j));
        let refs: Vec<&Prepared> = members.iter().map(|&i| &subpaths[i]).collect();
        let xx = (s.xx_upper, if est == Estimator::Biased { s.xx_diag } else { 0.0 });
        belief_scores(&refs, xx, beliefs, n_evals, h2, spec, est, derive_seed(seed, k as u64))
            .map_err(|e| e.context(&format!("ensemble {k}")))
    })?;
    let kb = beliefs.len();
    let n2 = ensembles.len();
    let scores: Vec<Vec<f64>> = (0..kb).map(|b| per_ensemble.iter().map(|v| v[b]).collect()).collect();
    let critical: Vec<f64> = nulls.iter().map(|n| n.critical).collect();
    let flags: Vec<Vec<bool>> = (0..kb)
        .map(|b| scores[b].iter().map(|&s| s > critical[b]).collect())
        .collect();
    let anomalous: Vec<bool> = (0..n2).map(|k| (0..kb).all(|b| flags[b][k])).collect();
    let quantiles = (0..kb)
        .map(|b| scores[b].iter().map(|&s| nulls[b].cdf(s)).collect())
        .collect();
    let exceedance = DetectionReport::per_subpath(ensembles, |k| if anomalous[k] { 1.0 } else { 0.0 });
    Ok(DetectionReport {
        scores,
        critical,
        flags,
        anomalous,
        exceedance,
        quantiles,
    })
}

/// Lag auto-evaluation score `A_i = Σ_l w_l D(s^{i−l}, s^i)`, defined for
/// `i ≥ max(L)`. Weights default to uniform.
pub fn auto_evaluate(
    subpaths: &[Prepared],
    ensembles: &EnsembleSet,
    lags: &[usize],
    weights: Option<&[f64]>,
    spec: &KernelSpec,
    est: Estimator,
) -> Result<Vec<Option<f64>>> {
    if lags.is_empty() || lags.contains(&0) {
        return Err(Error::arg("lags must be a non-empty set of positive integers"));
    }
    let uniform = vec![1.0 / lags.len() as f64; lags.len()];
    let w = weights.unwrap_or(&uniform);
    if w.len() != lags.len() {
        return Err(Error::arg(format!("{} weights for {} lags", w.len(), lags.len())));
    }
    let max_l = *lags.iter().max().expect("non-empty");
    if max_l >= ensembles.len() {
        return Err(Error::arg(format!(
            "largest lag {max_l} needs more than {} ensembles",
            ensembles.len()
        )));
    }
    if subpaths.len() != ensembles.n_subpaths {
        return Err(Error::shape("ensemble layout does not match the sub-path count"));
    }
    let band = BandGram::new(subpaths, ensembles.h2 + max_l, spec)?;
    let k = |i: usize, j: usize| band.get(i, j);
    exec::try_map_range(ensembles.len(), |i| {
        if i < max_l {
            return Ok(None);
        }
        let cur: Vec<usize> = ensembles.members(i).collect();
        let mut total = 0.0;
        for (&l, &wl) in lags.iter().zip(w) {
            let prev: Vec<usize> = ensembles.members(i - l).collect();
            total += wl * indexed_sums(&prev, &cur, &k).estimate(est)?;
        }
        Ok(Some(total))
    })
}

/// Rolling Gamma threshold over a score series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RollingNull {
    pub window: usize,
    pub alpha: f64,
    /// Index of the first entry with a threshold.
    pub burn_in: usize,
    /// Gamma `(shape, scale)` per entry where the moment fit was possible.
    pub params: Vec<Option<(f64, f64)>>,
    pub thresholds: Vec<Option<f64>>,
    pub flags: Vec<bool>,
    /// Entries where the window moments were unusable and the empirical
    /// quantile was used instead.
    pub fallbacks: usize,
}

/// Threshold entry `t` with a Gamma fit to the `window` defined scores before
/// it and flag `score_t > c_t`. When the window mean or variance is not
/// positive the window's empirical `(1−α)` quantile is used.
pub fn rolling_threshold(series: &[Option<f64>], window: usize, alpha: f64) -> Result<RollingNull> {
    if window < 2 {
        return Err(Error::arg("rolling window must hold at least two scores"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = series.len();
    let mut params = vec![None; n];
    let mut thresholds = vec![None; n];
    let mut flags = vec![false; n];
    let mut fallbacks = 0;
    let mut history: Vec<f64> = Vec::new();
    let mut burn_in = n;
    for t in 0..n {
        if history.len() >= window {
            let win = &history[history.len() - window..];
            let mean = win.iter().sum::<f64>() / window as f64;
            let var = win.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (window - 1) as f64;
            let c = match GammaFit::from_moments(mean, var, window as f64) {
                Ok(fit) if mean > 0.0 => {
                    params[t] = Some((fit.shape, fit.scale));
                    fit.critical(alpha)?
                }
                _ => {
                    fallbacks += 1;
                    let mut sorted = win.to_vec();
                    sorted.sort_by(f64::total_cmp);
                    order_statistic(&sorted, 1.0 - alpha)
                }
            };
            thresholds[t] = Some(c);
            burn_in = burn_in.min(t);
            if let Some(s) = series[t] {
                flags[t] = s > c;
            }
        }
        if let Some(s) = series[t] {
            history.push(s);
        }
    }
    Ok(RollingNull {
        window,
        alpha,
        burn_in,
        params,
        thresholds,
        flags,
        fallbacks,
    })
}

/// Source of belief samples for [`pathwise_detect`].
pub enum BeliefSampler<'a> {
    /// Draw once per belief from pre-simulated banks and reuse the draw for
    /// every sub-path.
    Banks(&'a [Vec<Prepared>]),
    /// Produce fresh samples for each window, e.g. simulated conditionally on
    /// the observed state at the window start. Called with the window index
    /// and must return one sample list per belief.
    Conditional(Box<dyn Fn(usize) -> Result<Vec<Vec<Prepared>>> + Sync + 'a>),
}

/// Output of the path-by-path similarity detector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    /// `matrices[j]` is the `k × (k−1)` similarity matrix of sub-path `j`.
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub n_samples: usize,
    pub seed: u64,
    /// `flags[j][i]`: sub-path `j` scores closer to every other belief than
    /// to belief `i`.
    pub flags: Vec<Vec<bool>>,
}

impl SimilarityReport {
    /// `Σ^{P_1, P_2}` series (first entry of row 0).
    pub fn primary_series(&self) -> Vec<f64> {
        self.matrices.iter().map(|m| m[0][0]).collect()
    }
}

/// Similarity matrix of every sub-path against `k ≥ 2` beliefs.
pub fn pathwise_detect(
    subpaths: &[Prepared],
    sampler: &BeliefSampler<'_>,
    n_samples: usize,
    spec: &KernelSpec,
    seed: u64,
) -> Result<SimilarityReport> {
    let matrices = match sampler {
        BeliefSampler::Banks(banks) => {
            if banks.len() < 2 {
                return Err(Error::arg("pathwise detection needs at least two beliefs"));
            }
            let samples = draw_samples(banks, n_samples, spec, seed)?;
            exec::try_map_range(subpaths.len(), |j| similarity_from_samples(&samples, &subpaths[j], spec))?
        }
        BeliefSampler::Conditional(make) => exec::try_map_range(subpaths.len(), |j| {
            let banks = make(j)?;
            if banks.len() < 2 {
                return Err(Error::arg("pathwise detection needs at least two beliefs"));
            }
            let samples = banks
                .into_iter()
                .map(|b| ScoringSample::new(b, spec))
                .collect::<Result<Vec<_>>>()?;
            similarity_from_samples(&samples, &subpaths[j], spec)
        })?,
    };
    let flags = matrices
        .iter()
        .map(|m| m.iter().map(|row| row.iter().all(|&v| v > 0.0)).collect())
        .collect();
    Ok(SimilarityReport {
        matrices,
        n_samples,
        seed,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmd::bootstrap_null;
    use crate::models::{simulate_gbm, Grid};
    use crate::streams::{compose, ensembles_for, extract_subpaths, Stream, Transform};

    fn constant(n: usize) -> Prepared {
        Prepared::Rows {
            p: 1,
            data: vec![1.0; n],
        }
    }

    #[test]
    fn band_gram_matches_direct_evaluation() {
        let spec = KernelSpec::rbf(0.5);
        let phi = compose(vec![Transform::StateNorm]).unwrap();
        let paths = phi
            .apply_all(&simulate_gbm(0.0, 0.3, 1, Grid::new(0.01, 6), 8, 1.0, 3).unwrap())
            .unwrap();
        let prep = spec.prepare_all(&paths).unwrap();
        let band = BandGram::new(&prep, 3, &spec).unwrap();
        assert_eq!(band.get(2, 4), spec.eval(&prep[2], &prep[4]).unwrap());
        assert_eq!(band.get(4, 2), band.get(2, 4));
    }

    #[test]
    fn self_bank_with_biased_statistic_scores_zero() {
        let spec = KernelSpec::rbf(0.5);
        let paths = simulate_gbm(0.0, 0.3, 1, Grid::new(0.01, 6), 4, 1.0, 3).unwrap();
        let prep = spec.prepare_all(&paths).unwrap();
        let refs: Vec<&Prepared> = prep.iter().collect();
        let beliefs = Beliefs::new(vec![prep.clone()]);
        let s = score_vector(&refs, &beliefs, 1, 4, &spec, Estimator::Biased, 1).unwrap();
        assert!(s[0].abs() < 1e-12);
    }

    #[test]
    fn constant_input_is_never_flagged() {
        let spec = KernelSpec::linear().with_time(false);
        let subs = vec![constant(5); 12];
        let bank = vec![constant(5); 20];
        let ens = ensembles_for(12, 4).unwrap();
        let null = bootstrap_null(&bank, 4, 20, &spec, Estimator::Unbiased, 0.05, 1).unwrap();
        let r = detect_online(&subs, &ens, &Beliefs::new(vec![bank]), &[null], 1, &spec, Estimator::Unbiased, 2).unwrap();
        assert!(r.anomalous.iter().all(|a| !a));
        assert!(r.exceedance.iter().flatten().all(|&e| e == 0.0));
        assert_eq!(r.exceedance.len(), 12);
        assert_eq!(r.exceedance[11], None);
    }

    fn toy_subpaths(spec: &KernelSpec, seed: u64) -> (Vec<Prepared>, usize) {
        // σ = 0.2 for the first half of the sub-paths, 0.3 after.
        let h1 = 7;
        let grid = Grid::new(1.0 / 1764.0, 120 * h1);
        let a = simulate_gbm(0.0, 0.2, 3, grid, 1, 1.0, seed).unwrap();
        let b = simulate_gbm(0.0, 0.3, 3, grid, 1, 1.0, seed + 1).unwrap();
        let phi = compose(vec![Transform::TimeNorm, Transform::StateNorm]).unwrap();
        let mut subs = Vec::new();
        for s in [&a[0], &b[0]] {
            let set = extract_subpaths(s, h1).unwrap();
            subs.extend(spec.prepare_all(&phi.apply_all(&set.paths).unwrap()).unwrap());
        }
        (subs, 120)
    }

    fn belief_bank(spec: &KernelSpec, n: usize) -> Vec<Prepared> {
        let phi = compose(vec![Transform::TimeNorm, Transform::StateNorm]).unwrap();
        let paths: Vec<Stream> = simulate_gbm(0.0, 0.2, 3, Grid::new(1.0 / 1764.0, 6), n, 1.0, 99).unwrap();
        spec.prepare_all(&phi.apply_all(&paths).unwrap()).unwrap()
    }

    #[test]
    fn changed_regime_is_flagged_more_often() {
        let spec = KernelSpec::rbf(0.02);
        let (subs, half) = toy_subpaths(&spec, 5);
        let bank = belief_bank(&spec, 400);
        let ens = ensembles_for(subs.len(), 16).unwrap();
        let null = bootstrap_null(&bank, 10, 200, &spec, Estimator::Unbiased, 0.05, 1).unwrap();
        let r = detect_online(&subs, &ens, &Beliefs::new(vec![bank]), &[null], 1, &spec, Estimator::Unbiased, 3).unwrap();
        let mean = |r: std::ops::Range<usize>, v: &[Option<f64>]| {
            let xs: Vec<f64> = v[r].iter().flatten().copied().collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        let (on, off) = (mean(0..half - 10, &r.exceedance), mean(half + 10..2 * half, &r.exceedance));
        assert!(off > on + 0.1, "{on} {off}");
        for e in r.exceedance.iter().flatten() {
            assert!((0.0..=1.0).contains(e));
        }
    }

    #[test]
    fn detector_is_causal() {
        let spec = KernelSpec::rbf(0.01);
        let (subs, _) = toy_subpaths(&spec, 6);
        let bank = belief_bank(&spec, 100);
        let null = bootstrap_null(&bank, 5, 50, &spec, Estimator::Unbiased, 0.05, 1).unwrap();
        let beliefs = Beliefs::new(vec![bank]);
        let full = detect_online(&subs[..80], &ensembles_for(80, 5).unwrap(), &beliefs, &[null.clone()], 2, &spec, Estimator::Unbiased, 3).unwrap();
        let cut = detect_online(&subs[..50], &ensembles_for(50, 5).unwrap(), &beliefs, &[null], 2, &spec, Estimator::Unbiased, 3).unwrap();
        assert_eq!(cut.scores[0][..], full.scores[0][..45]);
    }

    #[test]
    fn single_lag_matches_direct_mmd() {
        let spec = KernelSpec::rbf(0.01);
        let (subs, _) = toy_subpaths(&spec, 7);
        let ens = ensembles_for(subs.len(), 6).unwrap();
        let a = auto_evaluate(&subs, &ens, &[1], None, &spec, Estimator::Unbiased).unwrap();
        assert_eq!(a[0], None);
        let direct = crate::mmd::mmd_between(&subs[9..15], &subs[10..16], &spec, Estimator::Unbiased).unwrap();
        assert!((a[10].unwrap() - direct).abs() < 1e-12);
        assert!(auto_evaluate(&subs, &ens, &[], None, &spec, Estimator::Unbiased).is_err());
    }

    #[test]
    fn constant_stream_auto_scores_zero() {
        let spec = KernelSpec::linear().with_time(false);
        let subs = vec![constant(4); 20];
        let ens = ensembles_for(20, 4).unwrap();
        let a = auto_evaluate(&subs, &ens, &[1, 2, 3], None, &spec, Estimator::Unbiased).unwrap();
        assert!(a[..3].iter().all(Option::is_none));
        assert!(a[3..].iter().all(|v| v.unwrap().abs() < 1e-15));
    }

    #[test]
    fn rolling_threshold_reacts_to_a_step() {
        let mut series: Vec<Option<f64>> = (0..200).map(|i| Some(1.0 + 0.1 * ((i * 7919) % 13) as f64 / 13.0)).collect();
        for v in &mut series[150..] {
            *v = Some(5.0);
        }
        let r = rolling_threshold(&series, 50, 0.05).unwrap();
        assert_eq!(r.burn_in, 50);
        assert!(r.flags[..50].iter().all(|f| !f));
        assert!(r.flags[150]);
        assert!(rolling_threshold(&series, 1, 0.05).is_err());
    }

    #[test]
    fn rolling_threshold_falls_back_on_flat_windows() {
        let series = vec![Some(0.0); 30];
        let r = rolling_threshold(&series, 10, 0.05).unwrap();
        assert_eq!(r.fallbacks, 20);
        assert!(r.flags.iter().all(|f| !f));
    }

    #[test]
    fn shared_samples_give_exact_negations() {
        let spec = KernelSpec::rbf(0.01);
        let (subs, _) = toy_subpaths(&spec, 8);
        let banks = vec![belief_bank(&spec, 40), subs[120..160].to_vec()];
        let r = pathwise_detect(&subs[..10], &BeliefSampler::Banks(&banks), 16, &spec, 1).unwrap();
        for m in &r.matrices {
            assert_eq!(m[0][0], -m[1][0]);
        }
        let cond = BeliefSampler::Conditional(Box::new(|_| Ok(vec![belief_bank(&spec, 16), belief_bank(&spec, 16)])));
        let r = pathwise_detect(&subs[..3], &cond, 16, &spec, 1).unwrap();
        assert!(r.primary_series().iter().all(|v| *v == 0.0));
    }
}
