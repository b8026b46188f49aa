//! Maximum mean discrepancy estimators and null distributions.
//!
//! All statistics here are squared MMDs. [`distance`] takes the square root of
//! the clamped biased estimate for metric use.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma};

use crate::error::{Error, Result};
use crate::exec;
use crate::rng::stream_rng;
use crate::sigkernel::{GramMatrix, KernelSpec, Prepared};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Biased,
    #[default]
    Unbiased,
}

/// Sufficient sums for either estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSums {
    pub n: usize,
    pub m: usize,
    /// Σ_{i<j} k(x_i, x_j)
    pub xx_upper: f64,
    pub xx_diag: f64,
    pub yy_upper: f64,
    pub yy_diag: f64,
    /// Σ_{i,j} k(x_i, y_j)
    pub xy: f64,
}

impl BlockSums {
    pub fn estimate(&self, est: Estimator) -> Result<f64> {
        let (n, m) = (self.n as f64, self.m as f64);
        match est {
            Estimator::Biased => {
                if self.n == 0 || self.m == 0 {
                    return Err(Error::arg("MMD of an empty sample"));
                }
                Ok((2.0 * self.xx_upper + self.xx_diag) / (n * n) - 2.0 * self.xy / (n * m)
                    + (2.0 * self.yy_upper + self.yy_diag) / (m * m))
            }
            Estimator::Unbiased => {
                if self.n < 2 || self.m < 2 {
                    return Err(Error::arg(format!(
                        "unbiased MMD needs at least 2 samples per side, got {} and {}",
                        self.n, self.m
                    )));
                }
                Ok(2.0 * self.xx_upper / (n * (n - 1.0)) - 2.0 * self.xy / (n * m)
                    + 2.0 * self.yy_upper / (m * (m - 1.0)))
            }
        }
    }
}

fn check_square(g: &GramMatrix, name: &str) -> Result<()> {
    if g.rows != g.cols {
        return Err(Error::shape(format!("{name} must be square, got {}×{}", g.rows, g.cols)));
    }
    Ok(())
}

fn sums_from_grams(kxx: &GramMatrix, kxy: &GramMatrix, kyy: &GramMatrix) -> Result<BlockSums> {
    check_square(kxx, "K_xx")?;
    check_square(kyy, "K_yy")?;
    if kxy.rows != kxx.rows || kxy.cols != kyy.rows {
        return Err(Error::shape(format!(
            "K_xy is {}×{} but the blocks are {} and {}",
            kxy.rows, kxy.cols, kxx.rows, kyy.rows
        )));
    }
    let upper = |g: &GramMatrix| -> f64 {
        (0..g.rows).map(|i| (i + 1..g.cols).map(|j| 0.5 * (g.get(i, j) + g.get(j, i))).sum::<f64>()).sum()
    };
    Ok(BlockSums {
        n: kxx.rows,
        m: kyy.rows,
        xx_upper: upper(kxx),
        xx_diag: kxx.trace(),
        yy_upper: upper(kyy),
        yy_diag: kyy.trace(),
        xy: kxy.sum(),
    })
}

/// Biased squared MMD from precomputed Gram blocks.
pub fn mmd_biased(kxx: &GramMatrix, kxy: &GramMatrix, kyy: &GramMatrix) -> Result<f64> {
    sums_from_grams(kxx, kxy, kyy)?.estimate(Estimator::Biased)
}

/// Unbiased squared MMD from precomputed Gram blocks; may be negative.
pub fn mmd_unbiased(kxx: &GramMatrix, kxy: &GramMatrix, kyy: &GramMatrix) -> Result<f64> {
    sums_from_grams(kxx, kxy, kyy)?.estimate(Estimator::Unbiased)
}

/// Block sums for two samples addressed by index into a symmetric kernel
/// lookup `k(a, b)`.
pub fn indexed_sums(xs: &[usize], ys: &[usize], k: &dyn Fn(usize, usize) -> f64) -> BlockSums {
    let within = |v: &[usize]| -> (f64, f64) {
        let mut upper = 0.0;
        let mut diag = 0.0;
        for (a, &i) in v.iter().enumerate() {
            diag += k(i, i);
            for &j in &v[a + 1..] {
                upper += k(i, j);
            }
        }
        (upper, diag)
    };
    let (xx_upper, xx_diag) = within(xs);
    let (yy_upper, yy_diag) = within(ys);
    let xy = xs.iter().map(|&i| ys.iter().map(|&j| k(i, j)).sum::<f64>()).sum();
    BlockSums {
        n: xs.len(),
        m: ys.len(),
        xx_upper,
        xx_diag,
        yy_upper,
        yy_diag,
        xy,
    }
}

/// Block sums evaluating the kernel directly. The diagonal is only computed
/// for the biased estimator.
pub fn kernel_sums(
    xs: &[&Prepared],
    ys: &[&Prepared],
    spec: &KernelSpec,
    est: Estimator,
) -> Result<BlockSums> {
    let (n, m) = (xs.len(), ys.len());
    let with_diag = est == Estimator::Biased;
    // Enumerate the needed pairs once, then evaluate them in parallel.
    #[derive(Clone, Copy)]
    enum Slot {
        XxUpper,
        XxDiag,
        YyUpper,
        YyDiag,
        Xy,
    }
    let mut jobs: Vec<(Slot, &Prepared, &Prepared)> = Vec::new();
    for i in 0..n {
        if with_diag {
            jobs.push((Slot::XxDiag, xs[i], xs[i]));
        }
        for j in i + 1..n {
            jobs.push((Slot::XxUpper, xs[i], xs[j]));
        }
    }
    for i in 0..m {
        if with_diag {
            jobs.push((Slot::YyDiag, ys[i], ys[i]));
        }
        for j in i + 1..m {
            jobs.push((Slot::YyUpper, ys[i], ys[j]));
        }
    }
    for x in xs {
        for y in ys {
            jobs.push((Slot::Xy, x, y));
        }
    }
    let vals = exec::try_map(&jobs, |&(_, a, b)| spec.eval(a, b))?;
    let mut s = BlockSums {
        n,
        m,
        xx_upper: 0.0,
        xx_diag: 0.0,
        yy_upper: 0.0,
        yy_diag: 0.0,
        xy: 0.0,
    };
    for ((slot, _, _), v) in jobs.iter().zip(vals) {
        match slot {
            Slot::XxUpper => s.xx_upper += v,
            Slot::XxDiag => s.xx_diag += v,
            Slot::YyUpper => s.yy_upper += v,
            Slot::YyDiag => s.yy_diag += v,
            Slot::Xy => s.xy += v,
        }
    }
    Ok(s)
}

/// Squared MMD between two samples of prepared paths.
pub fn mmd_between(xs: &[Prepared], ys: &[Prepared], spec: &KernelSpec, est: Estimator) -> Result<f64> {
    let xr: Vec<&Prepared> = xs.iter().collect();
    let yr: Vec<&Prepared> = ys.iter().collect();
    kernel_sums(&xr, &yr, spec, est)?.estimate(est)
}

/// MMD as a distance: square root of the biased estimate clamped at zero.
pub fn distance(xs: &[Prepared], ys: &[Prepared], spec: &KernelSpec) -> Result<f64> {
    Ok(mmd_between(xs, ys, spec, Estimator::Biased)?.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullSource {
    Bootstrap,
    Gamma,
    Rolling,
    Permutation,
}

/// Moment-matched Gamma law of `n · D`: shape `E[D]²/Var(D)`, scale
/// `n · Var(D)/E[D]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub shape: f64,
    pub scale: f64,
    pub n: f64,
}

impl GammaFit {
    pub fn from_moments(mean: f64, var: f64, n: f64) -> Result<Self> {
        if !(mean > 0.0 && var > 0.0 && mean.is_finite() && var.is_finite()) {
            return Err(Error::Degenerate(format!(
                "Gamma fit needs positive mean and variance (mean {mean}, variance {var})"
            )));
        }
        if !(n > 0.0) {
            return Err(Error::arg("Gamma fit needs a positive sample size"));
        }
        Ok(GammaFit {
            shape: mean * mean / var,
            scale: n * var / mean,
            n,
        })
    }

    fn law(&self) -> Result<Gamma> {
        Gamma::new(self.shape, 1.0 / self.scale).map_err(|e| Error::Degenerate(e.to_string()))
    }

    /// Critical value on the scale of the statistic `D` itself.
    pub fn critical(&self, alpha: f64) -> Result<f64> {
        let q = self.law()?.inverse_cdf(1.0 - alpha);
        if q.is_finite() {
            Ok(q / self.n)
        } else {
            Err(Error::Numeric("Gamma quantile is not finite".into()))
        }
    }

    pub fn cdf(&self, statistic: f64) -> f64 {
        self.law().map_or(f64::NAN, |g| g.cdf(statistic * self.n))
    }

    pub fn pdf(&self, statistic: f64) -> f64 {
        self.law().map_or(f64::NAN, |g| g.pdf(statistic * self.n))
    }
}

/// Null distribution of an MMD statistic with its critical value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub source: NullSource,
    /// Sorted ascending.
    pub samples: Vec<f64>,
    pub gamma: Option<GammaFit>,
    pub alpha: f64,
    pub critical: f64,
}

/// Empirical `q`-quantile as the `ceil(q·M)`-th order statistic of sorted data.
pub fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let rank = (q * m as f64).ceil() as usize;
    sorted[rank.clamp(1, m) - 1]
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("confidence level α must lie in (0, 1), got {alpha}")))
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

impl NullDistribution {
    pub fn empirical(source: NullSource, mut samples: Vec<f64>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if samples.is_empty() {
            return Err(Error::arg("null distribution needs at least one sample"));
        }
        samples.sort_by(f64::total_cmp);
        let critical = order_statistic(&samples, 1.0 - alpha);
        Ok(NullDistribution {
            source,
            samples,
            gamma: None,
            alpha,
            critical,
        })
    }

    /// Probability mass at or below `statistic`.
    pub fn cdf(&self, statistic: f64) -> f64 {
        match &self.gamma {
            Some(g) => g.cdf(statistic),
            None => {
                let below = self.samples.partition_point(|&s| s <= statistic);
                below as f64 / self.samples.len() as f64
            }
        }
    }

    pub fn mean(&self) -> f64 {
        mean_var(&self.samples).0
    }
}

/// Bootstrap null: `m_pairs` MMDs between disjoint `h2`-subsets of the bank.
/// Draw `i` uses its own random stream, so the result does not depend on
/// scheduling.
pub fn bootstrap_null(
    bank: &[Prepared],
    h2: usize,
    m_pairs: usize,
    spec: &KernelSpec,
    est: Estimator,
    alpha: f64,
    seed: u64,
) -> Result<NullDistribution> {
    check_alpha(alpha)?;
    if h2 < 2 {
        return Err(Error::arg("ensemble size h2 must be at least 2"));
    }
    if bank.len() < 2 * h2 {
        return Err(Error::arg(format!(
            "bank of {} paths cannot supply two disjoint ensembles of {h2}",
            bank.len()
        )));
    }
    if m_pairs == 0 {
        return Err(Error::arg("bootstrap needs at least one draw"));
    }
    let samples = exec::try_map_range(m_pairs, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let idx = sample(&mut rng, bank.len(), 2 * h2).into_vec();
        let xs: Vec<&Prepared> = idx[..h2].iter().map(|&k| &bank[k]).collect();
        let ys: Vec<&Prepared> = idx[h2..].iter().map(|&k| &bank[k]).collect();
        kernel_sums_sequential(&xs, &ys, spec, est)?.estimate(est)
    })?;
    NullDistribution::empirical(NullSource::Bootstrap, samples, alpha)
}

/// Single-threaded block sums, used inside already-parallel loops.
pub(crate) fn kernel_sums_sequential(
    xs: &[&Prepared],
    ys: &[&Prepared],
    spec: &KernelSpec,
    est: Estimator,
) -> Result<BlockSums> {
    let with_diag = est == Estimator::Biased;
    let within = |v: &[&Prepared]| -> Result<(f64, f64)> {
        let mut upper = 0.0;
        let mut diag = 0.0;
        for (a, &p) in v.iter().enumerate() {
            if with_diag {
                diag += spec.eval(p, p)?;
            }
            for &q in &v[a + 1..] {
                upper += spec.eval(p, q)?;
            }
        }
        Ok((upper, diag))
    };
    let (xx_upper, xx_diag) = within(xs)?;
    let (yy_upper, yy_diag) = within(ys)?;
    let mut xy = 0.0;
    for &x in xs {
        for &y in ys {
            xy += spec.eval(x, y)?;
        }
    }
    Ok(BlockSums {
        n: xs.len(),
        m: ys.len(),
        xx_upper,
        xx_diag,
        yy_upper,
        yy_diag,
        xy,
    })
}

/// Gamma approximation fitted to the moments of `samples`; `n` is the sample
/// size the statistic was computed from.
pub fn gamma_threshold(samples: &[f64], n: f64, alpha: f64) -> Result<NullDistribution> {
    check_alpha(alpha)?;
    if samples.len() < 2 {
        return Err(Error::arg("Gamma fit needs at least two samples"));
    }
    let (mean, var) = mean_var(samples);
    let fit = GammaFit::from_moments(mean, var, n)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(NullDistribution {
        source: NullSource::Gamma,
        samples: sorted,
        gamma: Some(fit),
        alpha,
        critical: fit.critical(alpha)?,
    })
}

/// Gamma approximation from known moments.
pub fn gamma_from_moments(mean: f64, var: f64, n: f64, alpha: f64) -> Result<NullDistribution> {
    check_alpha(alpha)?;
    let fit = GammaFit::from_moments(mean, var, n)?;
    Ok(NullDistribution {
        source: NullSource::Gamma,
        samples: Vec::new(),
        gamma: Some(fit),
        alpha,
        critical: fit.critical(alpha)?,
    })
}

/// Permutation null for a fixed pair of samples: the pooled Gram matrix is
/// computed once and relabelled `n_perm` times.
pub fn permutation_null(
    xs: &[Prepared],
    ys: &[Prepared],
    spec: &KernelSpec,
    est: Estimator,
    n_perm: usize,
    alpha: f64,
    seed: u64,
) -> Result<NullDistribution> {
    let pool: Vec<Prepared> = xs.iter().chain(ys).cloned().collect();
    let g = crate::sigkernel::gram_symmetric(&pool, spec)?;
    let k = |i: usize, j: usize| g.get(i, j);
    let n = xs.len();
    let samples = exec::try_map_range(n_perm, |r| {
        let mut rng = stream_rng(seed, r as u64);
        let perm = sample(&mut rng, pool.len(), pool.len()).into_vec();
        indexed_sums(&perm[..n], &perm[n..], &k).estimate(est)
    })?;
    NullDistribution::empirical(NullSource::Permutation, samples, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
}

/// Reject equality of laws iff the statistic exceeds the null's critical value.
pub fn two_sample_test(
    xs: &[Prepared],
    ys: &[Prepared],
    spec: &KernelSpec,
    null: &NullDistribution,
    est: Estimator,
) -> Result<Verdict> {
    let statistic = mmd_between(xs, ys, spec, est)?;
    Ok(Verdict {
        statistic,
        critical: null.critical,
        reject: statistic > null.critical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::Stream;

    fn g(n: usize, m: usize, v: &[f64]) -> GramMatrix {
        GramMatrix {
            rows: n,
            cols: m,
            data: v.to_vec(),
        }
    }

    #[test]
    fn identical_blocks_give_zero() {
        let k = g(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        assert_eq!(mmd_biased(&k, &k, &k).unwrap(), 0.0);
    }

    #[test]
    fn singleton_expansion() {
        let one = g(1, 1, &[1.0]);
        let c = g(1, 1, &[0.25]);
        assert!((mmd_biased(&one, &c, &one).unwrap() - 1.5).abs() < 1e-15);
        assert!(mmd_unbiased(&one, &c, &one).is_err());
    }

    #[test]
    fn hand_expansion_of_two_by_two_blocks() {
        let kxx = g(2, 2, &[1.1, 0.4, 0.4, 0.9]);
        let kxy = g(2, 2, &[0.2, 0.5, 0.7, 0.1]);
        let kyy = g(2, 2, &[1.3, 0.6, 0.6, 0.8]);
        let biased = (1.1 + 0.8 + 0.9) / 4.0 - 2.0 * 1.5 / 4.0 + (1.3 + 1.2 + 0.8) / 4.0;
        assert!((mmd_biased(&kxx, &kxy, &kyy).unwrap() - biased).abs() < 1e-12);
        let unbiased = 0.4 - 2.0 * 1.5 / 4.0 + 0.6;
        assert!((mmd_unbiased(&kxx, &kxy, &kyy).unwrap() - unbiased).abs() < 1e-12);
        assert!(mmd_biased(&kxx, &g(2, 3, &[0.0; 6]), &kyy).is_err());
    }

    #[test]
    fn unbiased_special_cases() {
        let c = g(3, 3, &[0.7; 9]);
        assert!(mmd_unbiased(&c, &c, &c).unwrap().abs() < 1e-15);
        let eye = g(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let zero = g(3, 3, &[0.0; 9]);
        assert_eq!(mmd_unbiased(&eye, &zero, &eye).unwrap(), 0.0);
    }

    #[test]
    fn gamma_fit_arithmetic() {
        let fit = GammaFit::from_moments(2.0, 1.0, 10.0).unwrap();
        assert_eq!((fit.shape, fit.scale), (4.0, 5.0));
        assert!((fit.shape * fit.scale - 10.0 * 2.0).abs() < 1e-12);
        assert!(matches!(GammaFit::from_moments(1.0, 0.0, 5.0), Err(Error::Degenerate(_))));
        let null = gamma_from_moments(2.0, 1.0, 10.0, 0.05).unwrap();
        // Gamma(shape 4, scale 5) has its 95% quantile at 38.768282639663624
        // (scipy.stats.gamma.ppf); the critical value is that divided by N = 10.
        assert!((null.critical - 3.876_828_263_966_362).abs() < 1e-9, "{}", null.critical);
    }

    #[test]
    fn order_statistic_picks_the_ceiling_rank() {
        let s: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(order_statistic(&s, 0.95), 950.0);
        let null = NullDistribution::empirical(NullSource::Bootstrap, s.into_iter().rev().collect(), 0.05).unwrap();
        assert_eq!(null.critical, 950.0);
        assert_eq!(null.cdf(950.0), 0.95);
    }

    fn bank(n: usize) -> (KernelSpec, Vec<Prepared>) {
        let spec = KernelSpec::rbf(0.5);
        let paths: Vec<Stream> = (0..n)
            .map(|i| {
                let v: Vec<f64> = (0..5).map(|k| ((i * 7 + k * 3) % 11) as f64 / 11.0).collect();
                Stream::uniform_1d(&v, 0.25).unwrap()
            })
            .collect();
        let p = spec.prepare_all(&paths).unwrap();
        (spec, p)
    }

    #[test]
    fn bootstrap_is_deterministic_and_validates() {
        let (spec, p) = bank(30);
        let a = bootstrap_null(&p, 4, 120, &spec, Estimator::Unbiased, 0.05, 11).unwrap();
        let b = bootstrap_null(&p, 4, 120, &spec, Estimator::Unbiased, 0.05, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.critical, a.samples[113]);
        assert!(bootstrap_null(&p, 16, 10, &spec, Estimator::Unbiased, 0.05, 1).is_err());
    }

    #[test]
    fn identical_bank_gives_zero_null() {
        let spec = KernelSpec::rbf(0.5);
        let path = Stream::uniform_1d(&[1.0, 1.2, 0.9], 0.5).unwrap();
        let p = spec.prepare_all(&vec![path; 20]).unwrap();
        let null = bootstrap_null(&p, 5, 50, &spec, Estimator::Biased, 0.05, 3).unwrap();
        assert!(null.samples.iter().all(|&s| s.abs() < 1e-12));
        assert!(null.critical.abs() < 1e-12);
    }

    #[test]
    fn kernel_sums_agree_with_grams() {
        let (spec, p) = bank(6);
        let kxx = crate::sigkernel::gram_prepared(&p[..3], &p[..3], &spec).unwrap();
        let kxy = crate::sigkernel::gram_prepared(&p[..3], &p[3..], &spec).unwrap();
        let kyy = crate::sigkernel::gram_prepared(&p[3..], &p[3..], &spec).unwrap();
        for est in [Estimator::Biased, Estimator::Unbiased] {
            let direct = mmd_between(&p[..3], &p[3..], &spec, est).unwrap();
            let via = match est {
                Estimator::Biased => mmd_biased(&kxx, &kxy, &kyy).unwrap(),
                Estimator::Unbiased => mmd_unbiased(&kxx, &kxy, &kyy).unwrap(),
            };
            assert!((direct - via).abs() < 1e-12);
        }
        assert!(distance(&p[..3], &p[3..], &spec).unwrap() >= 0.0);
    }

    #[test]
    fn permutation_null_is_reproducible() {
        let (spec, p) = bank(10);
        let a = permutation_null(&p[..5], &p[5..], &spec, Estimator::Unbiased, 200, 0.1, 5).unwrap();
        let b = permutation_null(&p[..5], &p[5..], &spec, Estimator::Unbiased, 200, 0.1, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 200);
    }

    #[test]
    fn verdict_compares_against_critical_value() {
        let (spec, p) = bank(12);
        let null = NullDistribution::empirical(NullSource::Bootstrap, vec![0.0, 1.0], 0.5).unwrap();
        let v = two_sample_test(&p[..6], &p[..6], &spec, &null, Estimator::Biased).unwrap();
        assert!(v.statistic.abs() < 1e-12);
        assert!(!v.reject);
    }
}
