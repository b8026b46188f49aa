//! Synthetic price models and the regime-switching path generator.
//!
//! Each simulated path draws from its own random stream keyed by
//! `(seed, path index)`, so adding paths or running in parallel never changes
//! an existing path.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{stream_rng, Rng};
use crate::streams::Stream;

/// Uniform time grid `0, dt, …, n_steps·dt` starting at `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl Grid {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        Grid { t0: 0.0, dt, n_steps }
    }

    fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.t0 + i as f64 * self.dt).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.n_steps == 0 {
            return Err(Error::arg("grid needs a positive mesh and at least one step"));
        }
        Ok(())
    }
}

/// Model family with its parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Model {
    /// Geometric Brownian motion `dX = μX dt + σX dW`.
    Gbm { mu: f64, sigma: f64 },
    /// Geometric Brownian motion with log-normal jumps at rate `lambda`.
    Merton {
        mu: f64,
        sigma: f64,
        lambda: f64,
        gamma: f64,
        delta: f64,
    },
    /// Rough Bergomi with initial forward variance `xi0`, vol-of-vol `eta`,
    /// spot/vol correlation `rho` and Hurst exponent `hurst`.
    Rbergomi {
        xi0: f64,
        eta: f64,
        rho: f64,
        hurst: f64,
        #[serde(default)]
        emit_variance: bool,
    },
}

// Stream ids inside one path's generator family.
const DIFFUSION: u64 = 0;
const JUMPS: u64 = 1;

fn path_rng(seed: u64, index: u64, channel: u64) -> Rng {
    stream_rng(seed, (index << 2) | channel)
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Model::Gbm { mu, sigma } => mu.is_finite() && sigma >= 0.0 && sigma.is_finite(),
            Model::Merton {
                mu,
                sigma,
                lambda,
                gamma,
                delta,
            } => mu.is_finite() && sigma >= 0.0 && lambda >= 0.0 && gamma.is_finite() && delta >= 0.0,
            Model::Rbergomi {
                xi0, eta, rho, hurst, ..
            } => xi0 > 0.0 && eta.is_finite() && (-1.0..=1.0).contains(&rho) && hurst > 0.0 && hurst < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("invalid model parameters: {self:?}")))
        }
    }

    /// Number of emitted channels for `d` assets.
    pub fn output_dim(&self, d: usize) -> usize {
        match self {
            Model::Rbergomi {
                emit_variance: true, ..
            } => 2 * d,
            _ => d,
        }
    }

    /// Copy of the model whose variance process starts at `v0` (rough Bergomi
    /// only; other families are returned unchanged).
    pub fn restarted_at_variance(&self, v0: f64) -> Model {
        match self.clone() {
            Model::Rbergomi {
                eta,
                rho,
                hurst,
                emit_variance,
                ..
            } => Model::Rbergomi {
                xi0: v0,
                eta,
                rho,
                hurst,
                emit_variance,
            },
            other => other,
        }
    }

    /// Simulate path number `index` of the family keyed by `seed`, starting
    /// every asset at the matching entry of `x0`.
    pub fn simulate_path(&self, x0: &[f64], grid: Grid, seed: u64, index: u64) -> Result<Stream> {
        self.validate()?;
        grid.validate()?;
        let d = x0.len();
        if d == 0 || x0.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::arg("initial values must be positive"));
        }
        let n = grid.n_steps;
        let mut diff = path_rng(seed, index, DIFFUSION);
        let values: Vec<f64> = match *self {
            Model::Gbm { mu, sigma } => {
                let mut rows = vec![0.0; (n + 1) * d];
                rows[..d].copy_from_slice(x0);
                gbm_fill(&mut rows, d, n, mu, sigma, grid.dt, &mut diff, |_, _| 1.0);
                rows
            }
            Model::Merton {
                mu,
                sigma,
                lambda,
                gamma,
                delta,
            } => {
                let mut jumps = path_rng(seed, index, JUMPS);
                let counts = if lambda > 0.0 {
                    Some(Poisson::new(lambda * grid.dt).map_err(|e| Error::arg(e.to_string()))?)
                } else {
                    None
                };
                let mut rows = vec![0.0; (n + 1) * d];
                rows[..d].copy_from_slice(x0);
                gbm_fill(&mut rows, d, n, mu, sigma, grid.dt, &mut diff, |_, _| {
                    let Some(pois) = &counts else { return 1.0 };
                    let k = pois.sample(&mut jumps) as usize;
                    let log_jump: f64 = (0..k)
                        .map(|_| gamma + delta * Distribution::<f64>::sample(&StandardNormal, &mut jumps))
                        .sum();
                    log_jump.exp()
                });
                rows
            }
            Model::Rbergomi {
                xi0,
                eta,
                rho,
                hurst,
                emit_variance,
            } => rbergomi_rows(x0, grid, xi0, eta, rho, hurst, emit_variance, &mut diff)?,
        };
        Stream::from_flat(grid.times(), values, self.output_dim(d))
    }

    /// Simulate `n_paths` independent paths from a common start value.
    pub fn simulate(&self, d: usize, x0: f64, grid: Grid, n_paths: usize, seed: u64) -> Result<Vec<Stream>> {
        let start = vec![x0; d];
        if let Model::Rbergomi { hurst, .. } = *self {
            // Build the shared covariance factor once before fanning out.
            volterra_factor(hurst, grid.dt, grid.n_steps)?;
        }
        exec::try_map_range(n_paths, |i| self.simulate_path(&start, grid, seed, i as u64))
    }
}

/// Log-Euler update `X ← X·exp((μ−σ²/2)dt + σ√dt·Z)·J` with `J` from `jump`.
#[allow(clippy::too_many_arguments)]
fn gbm_fill(
    rows: &mut [f64],
    d: usize,
    n: usize,
    mu: f64,
    sigma: f64,
    dt: f64,
    rng: &mut Rng,
    mut jump: impl FnMut(usize, usize) -> f64,
) {
    let drift = (mu - 0.5 * sigma * sigma) * dt;
    let vol = sigma * dt.sqrt();
    for k in 1..=n {
        for c in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            let prev = rows[(k - 1) * d + c];
            rows[k * d + c] = prev * (drift + vol * z).exp() * jump(k, c);
        }
    }
}

/// Geometric Brownian motion paths.
pub fn simulate_gbm(mu: f64, sigma: f64, d: usize, grid: Grid, n_paths: usize, x0: f64, seed: u64) -> Result<Vec<Stream>> {
    Model::Gbm { mu, sigma }.simulate(d, x0, grid, n_paths, seed)
}

/// Merton jump-diffusion paths with parameters `(μ, σ, λ, γ, δ)`.
pub fn simulate_merton(phi: [f64; 5], d: usize, grid: Grid, n_paths: usize, x0: f64, seed: u64) -> Result<Vec<Stream>> {
    let [mu, sigma, lambda, gamma, delta] = phi;
    Model::Merton {
        mu,
        sigma,
        lambda,
        gamma,
        delta,
    }
    .simulate(d, x0, grid, n_paths, seed)
}

/// Rough Bergomi price and variance paths for `θ = (ξ0, η, ρ, H)`.
pub fn simulate_rbergomi(theta: [f64; 4], grid: Grid, n_paths: usize, x0: f64, seed: u64) -> Result<(Vec<Stream>, Vec<Stream>)> {
    let [xi0, eta, rho, hurst] = theta;
    let model = Model::Rbergomi {
        xi0,
        eta,
        rho,
        hurst,
        emit_variance: true,
    };
    let joint = model.simulate(1, x0, grid, n_paths, seed)?;
    let mut prices = Vec::with_capacity(n_paths);
    let mut vars = Vec::with_capacity(n_paths);
    for s in &joint {
        let px: Vec<f64> = s.values().chunks(2).map(|r| r[0]).collect();
        let vv: Vec<f64> = s.values().chunks(2).map(|r| r[1]).collect();
        prices.push(Stream::from_flat(s.times().to_vec(), px, 1)?);
        vars.push(Stream::from_flat(s.times().to_vec(), vv, 1)?);
    }
    Ok((prices, vars))
}

#[allow(clippy::too_many_arguments)]
fn rbergomi_rows(
    x0: &[f64],
    grid: Grid,
    xi0: f64,
    eta: f64,
    rho: f64,
    hurst: f64,
    emit_variance: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = grid.n_steps;
    let d = x0.len();
    let factor = volterra_factor(hurst, grid.dt, n)?;
    let width = if emit_variance { 2 * d } else { d };
    let mut rows = vec![0.0; (n + 1) * width];
    let perp = (1.0 - rho * rho).max(0.0).sqrt();
    let sqrt_dt = grid.dt.sqrt();
    for c in 0..d {
        let z: Vec<f64> = (0..2 * n).map(|_| StandardNormal.sample(rng)).collect();
        let yb = factor.apply(&z);
        let y: Vec<f64> = yb.iter().step_by(2).copied().collect();
        let b: Vec<f64> = yb.iter().skip(1).step_by(2).copied().collect();
        let mut log_s = x0[c].ln();
        let mut v = xi0;
        rows[c] = x0[c];
        if emit_variance {
            rows[d + c] = v;
        }
        let mut b_prev = 0.0;
        for k in 1..=n {
            let db = b[k - 1] - b_prev;
            b_prev = b[k - 1];
            let dperp: f64 = sqrt_dt * Distribution::<f64>::sample(&StandardNormal, rng);
            let dw = rho * db + perp * dperp;
            log_s += -0.5 * v * grid.dt + v.sqrt() * dw;
            let t = k as f64 * grid.dt;
            v = xi0 * (eta * y[k - 1] - 0.5 * eta * eta * t.powf(2.0 * hurst)).exp();
            rows[k * width + c] = log_s.exp();
            if emit_variance {
                rows[k * width + d + c] = v;
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Volterra covariance
// ---------------------------------------------------------------------------

/// Packed lower Cholesky factor of the joint covariance of the interleaved
/// vector `(Y_{t_1}, B_{t_1}, Y_{t_2}, B_{t_2}, …)` on the grid `t_k = k·dt`.
///
/// Entry `(i, j)` with `j ≤ i` lives at `i(i+1)/2 + j`. Rows are computed in
/// order from the leading block only, so the factor for `n` steps is exactly
/// the leading `2n × 2n` block of the factor for any longer grid.
#[derive(Debug)]
struct VolterraFactor {
    steps: usize,
    packed: Vec<f64>,
}

impl VolterraFactor {
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.packed[start..start + i + 1]
    }

    /// `L z` restricted to the first `z.len()` rows.
    fn apply(&self, z: &[f64]) -> Vec<f64> {
        assert!(z.len() <= 2 * self.steps);
        (0..z.len())
            .map(|i| self.row(i).iter().zip(z).map(|(l, v)| l * v).sum())
            .collect()
    }
}

type FactorKey = (u64, u64);

fn factor_cache() -> &'static Mutex<HashMap<FactorKey, Arc<VolterraFactor>>> {
    static CACHE: OnceLock<Mutex<HashMap<FactorKey, Arc<VolterraFactor>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Factor covering at least `n` steps, reusing the longest one computed so far
/// for this `(H, dt)`.
fn volterra_factor(hurst: f64, dt: f64, n: usize) -> Result<Arc<VolterraFactor>> {
    let key = (hurst.to_bits(), dt.to_bits());
    if let Some(f) = factor_cache().lock().expect("cache poisoned").get(&key) {
        if f.steps >= n {
            return Ok(Arc::clone(f));
        }
    }
    let factor = Arc::new(cholesky_packed(hurst, dt, n)?);
    let mut cache = factor_cache().lock().expect("cache poisoned");
    let entry = cache.entry(key).or_insert_with(|| Arc::clone(&factor));
    if entry.steps < factor.steps {
        *entry = Arc::clone(&factor);
    }
    Ok(factor)
}

fn cholesky_packed(hurst: f64, dt: f64, n: usize) -> Result<VolterraFactor> {
    let yy = VolterraTable::new(hurst, dt, n);
    let entry = |i: usize, j: usize| -> f64 {
        let (ki, kj) = (i / 2 + 1, j / 2 + 1);
        match (i % 2, j % 2) {
            (0, 0) => yy.get(ki, kj),
            (1, 1) => ki.min(kj) as f64 * dt,
            (0, 1) => cross_cov(hurst, ki as f64 * dt, kj as f64 * dt),
            _ => cross_cov(hurst, kj as f64 * dt, ki as f64 * dt),
        }
    };
    let m = 2 * n;
    let mut packed = vec![0.0; m * (m + 1) / 2];
    for i in 0..m {
        let ri = i * (i + 1) / 2;
        for j in 0..=i {
            let rj = j * (j + 1) / 2;
            let (head, tail) = packed.split_at_mut(ri);
            let row_i = &tail[..j];
            let row_j = if j < i { &head[rj..rj + j] } else { row_i };
            let a = entry(i, j) - dot(row_i, row_j);
            if i == j {
                if !(a > 0.0) {
                    return Err(Error::Numeric(format!(
                        "Volterra covariance is not positive definite for H = {hurst}, n = {n}; \
                         add diagonal jitter or move H away from 1/2"
                    )));
                }
                packed[ri + i] = a.sqrt();
            } else {
                packed[ri + j] = a / packed[rj + j];
            }
        }
    }
    Ok(VolterraFactor { steps: n, packed })
}

/// Dot product with four interleaved accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `Cov(Y_{i·dt}, Y_{j·dt})` for all grid pairs.
///
/// With `a = H − 1/2` and unit mesh, `∫_0^i (i−u)^a (j−u)^a du` for `i ≤ j`
/// is `Σ_{m<i} g(m, j−i)` where `g(m, δ) = ∫_m^{m+1} v^a (v+δ)^a dv`, so one
/// table of unit-interval integrals plus running sums gives every entry.
struct VolterraTable {
    n: usize,
    scale: f64,
    /// `cum[(i−1)·n + δ] = Σ_{m<i} g(m, δ)` for `1 ≤ i ≤ n`, `0 ≤ δ < n`.
    cum: Vec<f64>,
}

impl VolterraTable {
    fn new(hurst: f64, dt: f64, n: usize) -> Self {
        let a = hurst - 0.5;
        let mut cum = vec![0.0; n * n];
        // m = 0 carries the endpoint singularity and gets the graded rule.
        for delta in 0..n {
            cum[delta] = if delta == 0 {
                1.0 / (2.0 * a + 1.0)
            } else {
                substituted_integral(a, delta as f64)
            };
        }
        let (nodes, weights) = legendre_rule(8);
        for m in 1..n {
            let (prev, row) = cum.split_at_mut(m * n);
            let prev = &prev[(m - 1) * n..];
            let lo = m as f64;
            row[0] = prev[0] + ((lo + 1.0).powf(2.0 * a + 1.0) - lo.powf(2.0 * a + 1.0)) / (2.0 * a + 1.0);
            for delta in 1..n {
                let d = delta as f64;
                let g: f64 = nodes
                    .iter()
                    .zip(weights)
                    .map(|(x, w)| {
                        let v = lo + 0.5 + 0.5 * x;
                        w * (v * (v + d)).powf(a)
                    })
                    .sum::<f64>();
                row[delta] = prev[delta] + 0.5 * g;
            }
        }
        VolterraTable {
            n,
            scale: 2.0 * hurst * dt.powf(2.0 * hurst),
            cum,
        }
    }

    /// Covariance of `Y` at grid points `i, j ≥ 1`.
    fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(j <= self.n);
        self.scale * self.cum[(i - 1) * self.n + (j - i)]
    }
}

/// `Cov(Y_t, B_s) = √(2H) ∫_0^{min(s,t)} (t − u)^{H−1/2} du`.
fn cross_cov(hurst: f64, t: f64, s: f64) -> f64 {
    let a = hurst - 0.5;
    let m = t.min(s);
    (2.0 * hurst).sqrt() / (a + 1.0) * (t.powf(a + 1.0) - (t - m).powf(a + 1.0))
}

/// `Cov(Y_s, Y_t)` for `s ≤ t` where `Y_t = √(2H) ∫_0^t (t−u)^{H−1/2} dB_u`.
pub fn volterra_cov(hurst: f64, s: f64, t: f64) -> f64 {
    let (s, t) = if s <= t { (s, t) } else { (t, s) };
    if s <= 0.0 {
        return 0.0;
    }
    let a = hurst - 0.5;
    let r = (t - s) / s;
    let integral = if r == 0.0 {
        1.0 / (2.0 * a + 1.0)
    } else if r <= 1.0 {
        r.powf(2.0 * hurst) * substituted_integral(a, 1.0) + log_tail(a, r)
    } else {
        substituted_integral(a, r)
    };
    2.0 * hurst * s.powf(2.0 * hurst) * integral
}

/// `∫_0^1 u^a (r+u)^a du` through `u = z^{1/(a+1)}`, on geometrically graded panels.
fn substituted_integral(a: f64, r: f64) -> f64 {
    let p = 1.0 / (a + 1.0);
    let f = |z: f64| (r + z.powf(p)).powf(a);
    let mut edges = vec![0.0];
    edges.extend((0..=12).rev().map(|k| 0.1f64.powi(k)));
    edges.windows(2).map(|w| gauss_legendre(&f, w[0], w[1])).sum::<f64>() * p
}

/// `∫_r^1 u^a (r+u)^a du` for `0 < r ≤ 1`, in log space.
fn log_tail(a: f64, r: f64) -> f64 {
    let lo = r.ln();
    let panels = (-lo).ceil().max(1.0) as usize;
    let h = -lo / panels as f64;
    let f = |y: f64| ((a + 1.0) * y).exp() * (r + y.exp()).powf(a);
    (0..panels)
        .map(|k| gauss_legendre(&f, lo + k as f64 * h, lo + (k + 1) as f64 * h))
        .sum()
}

fn gauss_legendre(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (nodes, weights) = legendre_rule(24);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    nodes
        .iter()
        .zip(weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// 8- or 24-point Gauss-Legendre nodes and weights by Newton iteration.
fn legendre_rule(points: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static RULE_8: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static RULE_24: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let cell = match points {
        8 => &RULE_8,
        24 => &RULE_24,
        _ => unreachable!("unsupported rule size"),
    };
    cell.get_or_init(|| {
        let n = points;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 1..=n {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            nodes.push(x);
            weights.push(2.0 / ((1.0 - x * x) * dp * dp));
        }
        (nodes, weights)
    })
}

// ---------------------------------------------------------------------------
// Regime switching
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SwitchMode {
    /// Poisson entry/exit draws at every multiple of `h1`.
    Poisson,
    /// `count` changes of `duration` observations at uniformly drawn lattice points.
    FixedDuration { duration: usize, count: usize },
}

/// Configuration of a regime-switching path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSwitchSpec {
    /// Model sequence; the first entry is the base regime.
    pub models: Vec<Model>,
    #[serde(default = "one")]
    pub dim: usize,
    pub h1: usize,
    /// Poisson mean of the entry draw at each decision point.
    pub entry_rate: f64,
    /// Poisson mean of the exit draw at each decision point.
    pub exit_rate: f64,
    #[serde(default = "poisson_mode")]
    pub mode: SwitchMode,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "one_f")]
    pub x0: f64,
    /// Exit exactly on the `h1` lattice instead of one observation after it.
    #[serde(default)]
    pub lattice_aligned: bool,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn poisson_mode() -> SwitchMode {
    SwitchMode::Poisson
}

/// A simulated regime-switching path with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePath {
    pub stream: Stream,
    /// Index into the model sequence of the regime driving the step that
    /// leaves each observation.
    pub labels: Vec<usize>,
    /// Observation indices at which the regime changes.
    pub switches: Vec<usize>,
}

impl RegimePath {
    /// Majority label over the observations of each `h1` window (ties go to
    /// the larger label).
    pub fn subpath_labels(&self, h1: usize) -> Vec<usize> {
        self.labels
            .chunks_exact(h1)
            .map(|w| {
                let mut counts: HashMap<usize, usize> = HashMap::new();
                for &l in w {
                    *counts.entry(l).or_default() += 1;
                }
                counts
                    .into_iter()
                    .max_by_key(|&(l, c)| (c, l))
                    .map(|(l, _)| l)
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Draw the regime schedule: `(observation index, model index)` pairs.
fn draw_schedule(spec: &RegimeSwitchSpec, n_obs: usize) -> Result<Vec<(usize, usize)>> {
    let mut rng = stream_rng(spec.seed, u64::MAX);
    let m = spec.models.len();
    let mut schedule = vec![(0usize, 0usize)];
    let mut changes = 0usize;
    let next_model = |changes: usize| changes % m;
    match &spec.mode {
        SwitchMode::Poisson => {
            let draw = |rate: f64, rng: &mut Rng| -> Result<bool> {
                if rate <= 0.0 {
                    return Ok(false);
                }
                let p = Poisson::new(rate).map_err(|e| Error::arg(e.to_string()))?;
                Ok(p.sample(rng) > 0.0)
            };
            let mut in_change = false;
            let mut pending_exit: Option<usize> = None;
            let mut k = spec.h1;
            while k < n_obs - 1 {
                if let Some(e) = pending_exit {
                    if e <= k {
                        pending_exit = None;
                        in_change = false;
                    }
                    if e == k {
                        // A regime needs at least one full window.
                        k += spec.h1;
                        continue;
                    }
                }
                if pending_exit.is_none() {
                    if !in_change {
                        if draw(spec.entry_rate, &mut rng)? {
                            changes += 1;
                            schedule.push((k, next_model(changes)));
                            in_change = true;
                        }
                    } else if draw(spec.exit_rate, &mut rng)? {
                        let exit = if spec.lattice_aligned { k + spec.h1 } else { k + spec.h1 + 1 };
                        if exit < n_obs - 1 {
                            changes += 1;
                            schedule.push((exit, next_model(changes)));
                            pending_exit = Some(exit);
                        } else {
                            pending_exit = Some(usize::MAX);
                        }
                    }
                }
                k += spec.h1;
            }
        }
        SwitchMode::FixedDuration { duration, count } => {
            let slots = (n_obs - 1) / spec.h1;
            let span = duration.div_ceil(spec.h1).max(1);
            if *count * (span + 1) > slots {
                return Err(Error::arg("fixed-duration changes do not fit in the horizon"));
            }
            // Reject overlapping draws until `count` disjoint windows are placed.
            let mut starts: Vec<usize> = Vec::new();
            let mut attempts = 0;
            while starts.len() < *count {
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::arg("could not place fixed-duration changes"));
                }
                let s = rng.random_range(1..slots.saturating_sub(span).max(2));
                if starts.iter().all(|&o| s + span < o || o + span < s) {
                    starts.push(s);
                }
            }
            starts.sort_unstable();
            for s in starts {
                changes += 1;
                schedule.push((s * spec.h1, next_model(changes)));
                let end = (s + span) * spec.h1;
                if end < n_obs - 1 {
                    changes += 1;
                    schedule.push((end, next_model(changes)));
                }
            }
        }
    }
    Ok(schedule)
}

/// Simulate a continuous path following a schedule of `(start index, model)`
/// segments. Each segment starts from the previous segment's final value.
pub fn simulate_schedule(
    models: &[Model],
    dim: usize,
    x0: f64,
    dt: f64,
    n_obs: usize,
    schedule: &[(usize, usize)],
    seed: u64,
) -> Result<RegimePath> {
    if schedule.first().map(|s| s.0) != Some(0) {
        return Err(Error::arg("schedule must start at observation 0"));
    }
    let out_dim = models
        .first()
        .ok_or_else(|| Error::arg("empty model sequence"))?
        .output_dim(dim);
    if models.iter().any(|m| m.output_dim(dim) != out_dim) {
        return Err(Error::shape("all models in a sequence must emit the same channels"));
    }
    let mut values = Vec::with_capacity(n_obs * out_dim);
    let mut labels = vec![0; n_obs];
    let mut state: Vec<f64> = vec![x0; dim];
    let mut first_row: Option<Vec<f64>> = None;
    for (seg, &(start, model_idx)) in schedule.iter().enumerate() {
        let end = schedule.get(seg + 1).map_or(n_obs - 1, |s| s.0);
        if end <= start {
            return Err(Error::arg("schedule indices must increase"));
        }
        let model = models
            .get(model_idx)
            .ok_or_else(|| Error::arg(format!("model index {model_idx} out of range")))?;
        let grid = Grid {
            t0: start as f64 * dt,
            dt,
            n_steps: end - start,
        };
        let path = model.simulate_path(&state, grid, seed, seg as u64)?;
        let rows = path.values();
        if first_row.is_none() {
            first_row = Some(rows[..out_dim].to_vec());
            values.extend_from_slice(&rows[..out_dim]);
        }
        values.extend_from_slice(&rows[out_dim..]);
        state = path.value(path.len() - 1)[..dim].to_vec();
        for l in &mut labels[start..end] {
            *l = model_idx;
        }
    }
    if let Some(&(_, last)) = schedule.last() {
        labels[n_obs - 1] = last;
    }
    let times = (0..n_obs).map(|i| i as f64 * dt).collect();
    let stream = Stream::from_flat(times, values, out_dim)?;
    let switches = schedule.iter().skip(1).map(|s| s.0).collect();
    Ok(RegimePath {
        stream,
        labels,
        switches,
    })
}

/// Generate a regime-switching path with per-observation labels.
pub fn simulate_regime_switching(spec: &RegimeSwitchSpec) -> Result<RegimePath> {
    if spec.models.is_empty() {
        return Err(Error::arg("model sequence is empty"));
    }
    for m in &spec.models {
        m.validate()?;
    }
    if !(spec.dt > 0.0) || !(spec.horizon > 0.0) {
        return Err(Error::arg("horizon and mesh must be positive"));
    }
    let n_obs = (spec.horizon / spec.dt).round() as usize + 1;
    if spec.h1 < 2 || spec.h1 >= n_obs {
        return Err(Error::arg(format!(
            "switch granularity h1 = {} must be in [2, {n_obs})",
            spec.h1
        )));
    }
    let schedule = draw_schedule(spec, n_obs)?;
    simulate_schedule(&spec.models, spec.dim, spec.x0, spec.dt, n_obs, &schedule, spec.seed)
}
