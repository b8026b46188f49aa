//! Signature kernels.
//!
//! The untruncated kernel solves `f(s,t) = 1 + ∫∫ f ⟨dx, dy⟩` on the grid
//! spanned by the two paths' knots, refined `2^λ` times per increment, with the
//! explicit update
//!
//! ```text
//! f[i+1][j+1] = (f[i+1][j] + f[i][j+1]) · (1 + inc/2) − f[i][j]
//! ```
//!
//! where `inc` is the cell's share of the increment inner product. The global
//! error is `O(4^{-λ})`.
//!
//! Paths enter the kernel through [`KernelSpec::prepare`], which builds the
//! channel buffer once (time channel, bandwidth scaling, rank-2 lift or
//! truncated signature) so Gram matrices do not redo that work per entry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::signature::{lift_rows, signature_of_rows, TruncatedTensor};
use crate::streams::Stream;

/// Static kernel applied to path values before the signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StaticLift {
    /// `⟨x, y⟩ / σ²`.
    Linear,
    /// `exp(−|x − y|² / (2σ²))`.
    Rbf,
}

/// Kernel configuration.
///
/// `sigma` is the bandwidth of the rank-1 static kernel. For rank 2 it is the
/// inner scaling applied before the expanding-window signature lift, and
/// `outer_sigma` is the bandwidth of the static kernel on the lifted path. In
/// truncated mode (`truncation = Some(N)`) paths are divided by `sigma` and the
/// kernel is the level-wise dot product of their order-`N` signatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSpec {
    pub rank: u8,
    pub lift: StaticLift,
    pub sigma: f64,
    pub outer_sigma: f64,
    pub dyadic_order: u32,
    pub inner_order: usize,
    pub truncation: Option<usize>,
    pub time_channel: bool,
    /// Largest admissible `p^N` for explicit signature levels.
    pub capacity: usize,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            rank: 1,
            lift: StaticLift::Rbf,
            sigma: 1.0,
            outer_sigma: 1.0,
            dyadic_order: 2,
            inner_order: 3,
            truncation: None,
            time_channel: true,
            capacity: 1_000_000,
        }
    }
}

/// A path pre-processed for repeated kernel evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Prepared {
    /// Row-major `n × p` buffer of scaled channel values.
    Rows { p: usize, data: Vec<f64> },
    /// Truncated signature (truncated mode).
    Signature(TruncatedTensor),
}

impl Prepared {
    pub fn len(&self) -> usize {
        match self {
            Prepared::Rows { p, data } => data.len() / p,
            Prepared::Signature(_) => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Self {
        KernelSpec {
            sigma,
            ..Default::default()
        }
    }

    pub fn linear() -> Self {
        KernelSpec {
            lift: StaticLift::Linear,
            ..Default::default()
        }
    }

    pub fn rank2(inner_sigma: f64, outer_sigma: f64) -> Self {
        KernelSpec {
            rank: 2,
            sigma: inner_sigma,
            outer_sigma,
            ..Default::default()
        }
    }

    pub fn truncated(order: usize, sigma: f64) -> Self {
        KernelSpec {
            lift: StaticLift::Linear,
            sigma,
            truncation: Some(order),
            ..Default::default()
        }
    }

    pub fn with_time(mut self, on: bool) -> Self {
        self.time_channel = on;
        self
    }

    pub fn with_dyadic_order(mut self, lambda: u32) -> Self {
        self.dyadic_order = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sigma) || !positive(self.outer_sigma) {
            return Err(Error::Config("kernel bandwidths must be positive".into()));
        }
        if self.rank != 1 && self.rank != 2 {
            return Err(Error::Config(format!("kernel rank must be 1 or 2, got {}", self.rank)));
        }
        if self.dyadic_order > 12 {
            return Err(Error::Config("dyadic order above 12 is not supported".into()));
        }
        if let Some(n) = self.truncation {
            if n == 0 {
                return Err(Error::Config("truncation order must be at least 1".into()));
            }
            if self.rank != 1 || self.lift != StaticLift::Linear {
                return Err(Error::Config(
                    "truncated mode needs rank 1 with the linear lift".into(),
                ));
            }
        }
        if self.rank == 2 && self.inner_order == 0 {
            return Err(Error::Config("rank-2 inner order must be at least 1".into()));
        }
        Ok(())
    }

    fn check_capacity(&self, p: usize, order: usize) -> Result<()> {
        let size = (p as f64).powi(order as i32);
        if size > self.capacity as f64 {
            return Err(Error::Capacity(format!(
                "{p}^{order} signature entries exceed the cap of {}",
                self.capacity
            )));
        }
        Ok(())
    }

    /// Pre-process one path for this kernel.
    pub fn prepare(&self, stream: &Stream) -> Result<Prepared> {
        self.validate()?;
        let (p, mut data) = stream.channels(self.time_channel, 1.0);
        let inv = 1.0 / self.sigma;
        data.iter_mut().for_each(|v| *v *= inv);
        if let Some(order) = self.truncation {
            self.check_capacity(p, order)?;
            return Ok(Prepared::Signature(signature_of_rows(p, &data, order)?));
        }
        if self.rank == 2 {
            self.check_capacity(p, self.inner_order)?;
            let (width, mut lifted) = lift_rows(p, &data, self.inner_order)?;
            let inv = 1.0 / self.outer_sigma;
            lifted.iter_mut().for_each(|v| *v *= inv);
            return Ok(Prepared::Rows { p: width, data: lifted });
        }
        Ok(Prepared::Rows { p, data })
    }

    pub fn prepare_all(&self, streams: &[Stream]) -> Result<Vec<Prepared>> {
        exec::try_map(streams, |s| self.prepare(s))
    }

    /// Kernel value between two prepared paths.
    pub fn eval(&self, a: &Prepared, b: &Prepared) -> Result<f64> {
        let value = match (a, b) {
            (Prepared::Signature(x), Prepared::Signature(y)) => x.dot(y)?,
            (Prepared::Rows { p: pa, data: da }, Prepared::Rows { p: pb, data: db }) => {
                if pa != pb {
                    return Err(Error::shape(format!("channel counts {pa} and {pb} differ")));
                }
                let delta = increment_matrix(*pa, da, db, self.lift);
                goursat(&delta, da.len() / pa - 1, db.len() / pb - 1, self.dyadic_order)
            }
            _ => return Err(Error::shape("prepared paths come from different kernel modes")),
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Numeric("signature kernel evaluated to a non-finite value".into()))
        }
    }
}

/// Inner products of the increments of the lifted paths, `(n−1) × (m−1)`.
fn increment_matrix(p: usize, x: &[f64], y: &[f64], lift: StaticLift) -> Vec<f64> {
    let n = x.len() / p;
    let m = y.len() / p;
    let mut delta = Vec::with_capacity((n - 1) * (m - 1));
    match lift {
        StaticLift::Linear => {
            let dx: Vec<f64> = (1..n)
                .flat_map(|i| (0..p).map(move |c| x[i * p + c] - x[(i - 1) * p + c]))
                .collect();
            let dy: Vec<f64> = (1..m)
                .flat_map(|j| (0..p).map(move |c| y[j * p + c] - y[(j - 1) * p + c]))
                .collect();
            for a in dx.chunks(p) {
                for b in dy.chunks(p) {
                    delta.push(a.iter().zip(b).map(|(u, v)| u * v).sum());
                }
            }
        }
        StaticLift::Rbf => {
            let mut k = Vec::with_capacity(n * m);
            for a in x.chunks(p) {
                for b in y.chunks(p) {
                    let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                    k.push((-0.5 * d2).exp());
                }
            }
            for i in 0..n - 1 {
                for j in 0..m - 1 {
                    delta.push(
                        k[(i + 1) * m + j + 1] - k[(i + 1) * m + j] - k[i * m + j + 1] + k[i * m + j],
                    );
                }
            }
        }
    }
    delta
}

/// Solve the Goursat problem for a piecewise-constant increment matrix
/// `delta` of shape `n_inc × m_inc`, refining each cell into `4^λ` sub-cells.
pub fn goursat(delta: &[f64], n_inc: usize, m_inc: usize, dyadic_order: u32) -> f64 {
    let r = 1usize << dyadic_order;
    let cols = m_inc * r;
    let scale = 1.0 / (r * r) as f64;
    let mut prev = vec![1.0; cols + 1];
    let mut cur = vec![1.0; cols + 1];
    for i in 0..n_inc {
        let row = &delta[i * m_inc..(i + 1) * m_inc];
        for _ in 0..r {
            cur[0] = 1.0;
            for (jc, &d) in row.iter().enumerate() {
                let a = 1.0 + 0.5 * d * scale;
                for jf in jc * r..(jc + 1) * r {
                    cur[jf + 1] = (cur[jf] + prev[jf + 1]) * a - prev[jf];
                }
            }
            std::mem::swap(&mut prev, &mut cur);
        }
    }
    prev[cols]
}

/// Rank-1 untruncated kernel via the Goursat solver.
pub fn solve_goursat(x: &Stream, y: &Stream, spec: &KernelSpec) -> Result<f64> {
    if spec.rank != 1 || spec.truncation.is_some() {
        return Err(Error::Config("solve_goursat needs an untruncated rank-1 spec".into()));
    }
    sig_kernel(x, y, spec)
}

/// Kernel value under `spec`: rank 1, rank 2 or truncated.
pub fn sig_kernel(x: &Stream, y: &Stream, spec: &KernelSpec) -> Result<f64> {
    spec.eval(&spec.prepare(x)?, &spec.prepare(y)?)
}

/// `⟨S^N(x/σ), S^N(y/σ)⟩` using the spec's time channel and scaling.
pub fn truncated_kernel(x: &Stream, y: &Stream, order: usize, spec: &KernelSpec) -> Result<f64> {
    let spec = KernelSpec {
        truncation: Some(order),
        lift: StaticLift::Linear,
        rank: 1,
        ..spec.clone()
    };
    sig_kernel(x, y, &spec)
}

/// Rank-2 kernel: rank-1 kernel between expanding-window signature lifts.
pub fn rank2_kernel(x: &Stream, y: &Stream, spec: &KernelSpec) -> Result<f64> {
    if spec.rank != 2 {
        return Err(Error::Config("rank2_kernel needs a rank-2 spec".into()));
    }
    sig_kernel(x, y, spec)
}

/// Dense kernel matrix between two path collections.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Sub-matrix of the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> GramMatrix {
        let data = rows
            .iter()
            .flat_map(|&i| cols.iter().map(move |&j| self.get(i, j)))
            .collect();
        GramMatrix {
            rows: rows.len(),
            cols: cols.len(),
            data,
        }
    }
}

pub fn gram_prepared(xs: &[Prepared], ys: &[Prepared], spec: &KernelSpec) -> Result<GramMatrix> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::arg("Gram matrix of an empty collection"));
    }
    let m = ys.len();
    let data = exec::try_map_range(xs.len() * m, |e| {
        let (i, j) = (e / m, e % m);
        spec.eval(&xs[i], &ys[j])
            .map_err(|err| err.context(&format!("Gram entry ({i}, {j})")))
    })?;
    Ok(GramMatrix {
        rows: xs.len(),
        cols: m,
        data,
    })
}

/// Self-Gram: each unordered pair is evaluated once and mirrored, so the
/// result is exactly symmetric.
pub fn gram_symmetric(xs: &[Prepared], spec: &KernelSpec) -> Result<GramMatrix> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::arg("Gram matrix of an empty collection"));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals = exec::try_map(&pairs, |&(i, j)| {
        spec.eval(&xs[i], &xs[j])
            .map_err(|err| err.context(&format!("Gram entry ({i}, {j})")))
    })?;
    let mut data = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(vals) {
        data[i * n + j] = v;
        data[j * n + i] = v;
    }
    Ok(GramMatrix { rows: n, cols: n, data })
}

/// Kernel matrix between two stream lists.
pub fn gram(xs: &[Stream], ys: &[Stream], spec: &KernelSpec) -> Result<GramMatrix> {
    gram_prepared(&spec.prepare_all(xs)?, &spec.prepare_all(ys)?, spec)
}
