//! Signature-kernel scoring rule and the similarity score built from it.
//!
//! The score of a sample `P = {x_1..x_N}` at a point `y` is
//! `(1/(N(N−1))) Σ_{i≠j} k(x_i, x_j) − (2/N) Σ_i k(x_i, y)`; lower means `y`
//! looks more like a draw from `P`.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::exec;
use crate::rng::stream_rng;
use crate::sigkernel::{KernelSpec, Prepared};

fn check_rank(spec: &KernelSpec) -> Result<()> {
    if spec.rank != 1 {
        return Err(Error::Config(
            "scoring rules compare a sample with a single path and need a rank-1 kernel".into(),
        ));
    }
    Ok(())
}

/// A belief sample with its within-sample kernel mean cached, so scoring many
/// points against it costs `N` kernel evaluations each.
#[derive(Debug, Clone)]
pub struct ScoringSample {
    paths: Vec<Prepared>,
    within_mean: f64,
}

impl ScoringSample {
    pub fn new(paths: Vec<Prepared>, spec: &KernelSpec) -> Result<Self> {
        check_rank(spec)?;
        let n = paths.len();
        if n < 2 {
            return Err(Error::arg(format!("kernel score needs at least 2 sample paths, got {n}")));
        }
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let vals = exec::try_map(&pairs, |&(i, j)| spec.eval(&paths[i], &paths[j]))?;
        let within_mean = 2.0 * vals.iter().sum::<f64>() / (n * (n - 1)) as f64;
        Ok(ScoringSample { paths, within_mean })
    }

    /// Draw `n` paths without replacement from `bank` using random stream
    /// `stream` of `seed`.
    pub fn draw(bank: &[Prepared], n: usize, spec: &KernelSpec, seed: u64, stream: u64) -> Result<Self> {
        if bank.len() < n {
            return Err(Error::arg(format!(
                "belief bank holds {} paths but {n} were requested",
                bank.len()
            )));
        }
        let mut rng = stream_rng(seed, stream);
        let idx = sample(&mut rng, bank.len(), n).into_vec();
        Self::new(idx.into_iter().map(|i| bank[i].clone()).collect(), spec)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn within_mean(&self) -> f64 {
        self.within_mean
    }

    /// Unbiased kernel score at `y`.
    pub fn score(&self, y: &Prepared, spec: &KernelSpec) -> Result<f64> {
        let mut cross = 0.0;
        for x in &self.paths {
            cross += spec.eval(x, y)?;
        }
        Ok(self.within_mean - 2.0 * cross / self.paths.len() as f64)
    }
}

/// Unbiased kernel score `s(P, y)`.
pub fn kernel_score(sample_p: &[Prepared], y: &Prepared, spec: &KernelSpec) -> Result<f64> {
    ScoringSample::new(sample_p.to_vec(), spec)?.score(y, spec)
}

/// `Σ^{P,Q}(x) = s(P, x) − s(Q, x)`: negative when `x` is closer to `P`.
pub fn similarity_score(p: &[Prepared], q: &[Prepared], x: &Prepared, spec: &KernelSpec) -> Result<f64> {
    Ok(kernel_score(p, x, spec)? - kernel_score(q, x, spec)?)
}

/// Draw one scoring sample of size `n_samples` per bank. Every bank uses the
/// same random stream, so equal-sized banks share index sets and identical
/// banks yield identical samples.
pub fn draw_samples(banks: &[Vec<Prepared>], n_samples: usize, spec: &KernelSpec, seed: u64) -> Result<Vec<ScoringSample>> {
    banks
        .iter()
        .enumerate()
        .map(|(b, bank)| ScoringSample::draw(bank, n_samples, spec, seed, 0).map_err(|e| e.context(&format!("belief {b}"))))
        .collect()
}

/// Similarity matrix from already drawn samples: row `i` holds
/// `Σ^{P_i, P_j}(x)` for every `j ≠ i` in bank order.
pub fn similarity_from_samples(samples: &[ScoringSample], x: &Prepared, spec: &KernelSpec) -> Result<Vec<Vec<f64>>> {
    if samples.len() < 2 {
        return Err(Error::arg("similarity matrix needs at least two beliefs"));
    }
    let scores = samples.iter().map(|s| s.score(x, spec)).collect::<Result<Vec<_>>>()?;
    Ok((0..scores.len())
        .map(|i| {
            (0..scores.len())
                .filter(|&j| j != i)
                .map(|j| scores[i] - scores[j])
                .collect()
        })
        .collect())
}

/// `k × (k−1)` similarity matrix of `x` against `k` belief banks, sampling
/// `n_samples` paths from each bank once and reusing them across entries.
pub fn similarity_matrix(
    banks: &[Vec<Prepared>],
    x: &Prepared,
    n_samples: usize,
    spec: &KernelSpec,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_rank(spec)?;
    if banks.len() < 2 {
        return Err(Error::arg("similarity matrix needs at least two beliefs"));
    }
    similarity_from_samples(&draw_samples(banks, n_samples, spec, seed)?, x, spec)
}
