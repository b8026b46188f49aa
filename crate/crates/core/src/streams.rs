//! Discretely observed paths, stream transforms and windowing.
//!
//! A [`Stream`] is a time-augmented sequence of `d`-dimensional observations.
//! Transforms act on one stream at a time and are chained through a
//! [`StreamTransformer`]. [`extract_subpaths`] and [`extract_ensembles`] cut a
//! long stream into the non-overlapping windows and sliding window groups the
//! detectors work on.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-augmented stream: strictly increasing timestamps, one `dim`-vector per
/// timestamp, at least two observations, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    times: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
}

impl Stream {
    /// Build from timestamps and a row-major `times.len() × dim` value buffer.
    pub fn from_flat(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::shape("stream dimension must be positive"));
        }
        if times.len() < 2 {
            return Err(Error::arg(format!(
                "stream needs at least 2 observations, got {}",
                times.len()
            )));
        }
        if values.len() != times.len() * dim {
            return Err(Error::shape(format!(
                "expected {} values for {} observations of dimension {dim}, got {}",
                times.len() * dim,
                times.len(),
                values.len()
            )));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::arg(format!(
                "timestamps must be strictly increasing (index {})",
                i + 1
            )));
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("stream contains non-finite entries".into()));
        }
        Ok(Stream { times, values, dim })
    }

    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("value rows have differing dimensions"));
        }
        Self::from_flat(times, rows.concat(), dim)
    }

    /// One-dimensional stream on the grid `0, dt, 2dt, …`.
    pub fn uniform_1d(values: &[f64], dt: f64) -> Result<Self> {
        let times = (0..values.len()).map(|i| i as f64 * dt).collect();
        Self::from_flat(times, values.to_vec(), 1)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn first_time(&self) -> f64 {
        self.times[0]
    }

    pub fn last_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Copy of observations `range` as a new stream.
    pub fn slice(&self, range: Range<usize>) -> Result<Stream> {
        if range.end > self.len() || range.start >= range.end {
            return Err(Error::Range(format!(
                "slice {range:?} outside stream of length {}",
                self.len()
            )));
        }
        Stream::from_flat(
            self.times[range.clone()].to_vec(),
            self.values[range.start * self.dim..range.end * self.dim].to_vec(),
            self.dim,
        )
    }

    /// Values followed by time as channel 0 when `with_time` is set, row-major.
    pub fn channels(&self, with_time: bool, time_scale: f64) -> (usize, Vec<f64>) {
        if !with_time {
            return (self.dim, self.values.clone());
        }
        let p = self.dim + 1;
        let mut out = Vec::with_capacity(self.len() * p);
        for i in 0..self.len() {
            out.push(self.times[i] * time_scale);
            out.extend_from_slice(self.value(i));
        }
        (p, out)
    }

    /// Total 1-variation of the piecewise-linear interpolant (Euclidean norm).
    pub fn one_variation(&self) -> f64 {
        (1..self.len())
            .map(|i| {
                self.value(i)
                    .iter()
                    .zip(self.value(i - 1))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }
}

/// Value of the piecewise-linear interpolant of `stream` at time `t`.
pub fn embed_linear(stream: &Stream, t: f64) -> Result<Vec<f64>> {
    let times = stream.times();
    if !(t >= stream.first_time() && t <= stream.last_time()) {
        return Err(Error::Range(format!(
            "t = {t} outside [{}, {}]",
            stream.first_time(),
            stream.last_time()
        )));
    }
    // index of the first knot strictly greater than t
    let hi = times.partition_point(|&s| s <= t);
    if hi == 0 || times[hi - 1] == t {
        let k = hi.saturating_sub(1);
        return Ok(stream.value(k).to_vec());
    }
    if hi == times.len() {
        return Ok(stream.value(times.len() - 1).to_vec());
    }
    let lo = hi - 1;
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    Ok(stream
        .value(lo)
        .iter()
        .zip(stream.value(hi))
        .map(|(a, b)| a + w * (b - a))
        .collect())
}

/// Scaling factor: one scalar broadcast over channels, or one per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleFactor {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// A single stream transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Transform {
    /// Re-time observations to `i/(n-1)` on `[0, 1]`.
    TimeNorm,
    /// Divide every observation component-wise by the first observation.
    StateNorm,
    /// First value plus the running sum of absolute increments.
    Increment,
    /// Hadamard product of every observation with the factor.
    Scale(ScaleFactor),
    /// Discrete lead-lag path of doubled dimension.
    LeadLag,
}

impl Transform {
    fn output_dim(&self, input: usize) -> Result<usize> {
        match self {
            Transform::Scale(ScaleFactor::Vector(v)) if v.len() != input => Err(Error::shape(
                format!("scale vector of length {} for dimension {input}", v.len()),
            )),
            Transform::LeadLag => Ok(2 * input),
            _ => Ok(input),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = match self {
            Transform::Scale(ScaleFactor::Scalar(s)) => !s.is_finite(),
            Transform::Scale(ScaleFactor::Vector(v)) => v.is_empty() || v.iter().any(|s| !s.is_finite()),
            _ => false,
        };
        if bad {
            Err(Error::arg("scale factor must be finite and nonempty"))
        } else {
            Ok(())
        }
    }
}

/// Apply one transform to a stream.
pub fn apply_transform(kind: &Transform, stream: &Stream) -> Result<Stream> {
    kind.validate()?;
    let n = stream.len();
    let d = stream.dim();
    match kind {
        Transform::TimeNorm => {
            let times = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            Stream::from_flat(times, stream.values().to_vec(), d)
        }
        Transform::StateNorm => {
            let x0 = stream.value(0).to_vec();
            if let Some(c) = x0.iter().position(|&v| v == 0.0) {
                return Err(Error::Domain(format!(
                    "state normalisation needs a nonzero initial value (component {c} is 0)"
                )));
            }
            let values = stream
                .values()
                .chunks(d)
                .flat_map(|row| row.iter().zip(&x0).map(|(v, s)| v / s))
                .collect();
            Stream::from_flat(stream.times().to_vec(), values, d)
        }
        Transform::Increment => {
            let mut values = Vec::with_capacity(n * d);
            let mut acc = stream.value(0).to_vec();
            values.extend_from_slice(&acc);
            for i in 1..n {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += (stream.value(i)[c] - stream.value(i - 1)[c]).abs();
                }
                values.extend_from_slice(&acc);
            }
            Stream::from_flat(stream.times().to_vec(), values, d)
        }
        Transform::Scale(factor) => {
            let lambda: Vec<f64> = match factor {
                ScaleFactor::Scalar(s) => vec![*s; d],
                ScaleFactor::Vector(v) => {
                    kind.output_dim(d)?;
                    v.clone()
                }
            };
            let values = stream
                .values()
                .chunks(d)
                .flat_map(|row| row.iter().zip(&lambda).map(|(v, l)| v * l))
                .collect();
            Stream::from_flat(stream.times().to_vec(), values, d)
        }
        Transform::LeadLag => {
            // Rows (x_i, x_i) at t_i and (x_i, x_{i+1}) at the midpoint of [t_i, t_{i+1}].
            let mut times = Vec::with_capacity(2 * n - 1);
            let mut values = Vec::with_capacity((2 * n - 1) * 2 * d);
            for i in 0..n {
                times.push(stream.times()[i]);
                values.extend_from_slice(stream.value(i));
                values.extend_from_slice(stream.value(i));
                if i + 1 < n {
                    times.push(0.5 * (stream.times()[i] + stream.times()[i + 1]));
                    values.extend_from_slice(stream.value(i));
                    values.extend_from_slice(stream.value(i + 1));
                }
            }
            Stream::from_flat(times, values, 2 * d)
        }
    }
}

/// Composition `φ_1 ∘ … ∘ φ_N` of transforms listed left to right; the last
/// listed transform is applied first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StreamTransformer {
    transforms: Vec<Transform>,
}

/// Validate and chain a list of transforms. The empty list is the identity.
pub fn compose(transforms: Vec<Transform>) -> Result<StreamTransformer> {
    for t in &transforms {
        t.validate()?;
    }
    Ok(StreamTransformer { transforms })
}

impl StreamTransformer {
    pub fn identity() -> Self {
        StreamTransformer::default()
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    /// Output dimension for a given input dimension, checking every stage.
    pub fn output_dim(&self, input: usize) -> Result<usize> {
        self.transforms
            .iter()
            .rev()
            .try_fold(input, |d, t| t.output_dim(d))
    }

    pub fn apply(&self, stream: &Stream) -> Result<Stream> {
        let mut out = stream.clone();
        for t in self.transforms.iter().rev() {
            out = apply_transform(t, &out)?;
        }
        Ok(out)
    }

    pub fn apply_all(&self, streams: &[Stream]) -> Result<Vec<Stream>> {
        crate::exec::try_map(streams, |s| self.apply(s))
    }
}

/// Ordered non-overlapping windows of `h1` observations cut from one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SubPathSet {
    pub h1: usize,
    pub parent_len: usize,
    pub paths: Vec<Stream>,
}

impl SubPathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Observation indices of the parent covered by sub-path `j`.
    pub fn span(&self, j: usize) -> Range<usize> {
        j * self.h1..(j + 1) * self.h1
    }
}

/// Cut `floor(N / h1)` windows of `h1` observations, dropping the tail.
pub fn extract_subpaths(stream: &Stream, h1: usize) -> Result<SubPathSet> {
    if h1 < 2 {
        return Err(Error::arg(format!("h1 must be at least 2, got {h1}")));
    }
    if stream.len() < h1 {
        return Err(Error::arg(format!(
            "stream of length {} is shorter than h1 = {h1}",
            stream.len()
        )));
    }
    let n1 = stream.len() / h1;
    let paths = (0..n1)
        .map(|j| stream.slice(j * h1..(j + 1) * h1))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubPathSet {
        h1,
        parent_len: stream.len(),
        paths,
    })
}

/// Sliding groups of `h2` consecutive sub-paths with stride one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleSet {
    pub h2: usize,
    pub n_subpaths: usize,
}

impl EnsembleSet {
    /// Number of ensembles, `N1 - h2`.
    pub fn len(&self) -> usize {
        self.n_subpaths - self.h2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sub-path indices making up ensemble `k`.
    pub fn members(&self, k: usize) -> Range<usize> {
        k..k + self.h2
    }

    /// Ensembles that contain sub-path `i` (possibly empty).
    pub fn containing(&self, i: usize) -> Range<usize> {
        let lo = (i + 1).saturating_sub(self.h2);
        let hi = (i + 1).min(self.len());
        lo..hi.max(lo)
    }
}

pub fn extract_ensembles(subpaths: &SubPathSet, h2: usize) -> Result<EnsembleSet> {
    ensembles_for(subpaths.len(), h2)
}

/// Ensemble layout for `n_subpaths` sub-paths without needing the paths.
pub fn ensembles_for(n_subpaths: usize, h2: usize) -> Result<EnsembleSet> {
    if h2 < 2 {
        return Err(Error::arg(format!("h2 must be at least 2, got {h2}")));
    }
    if n_subpaths <= h2 {
        return Err(Error::arg(format!(
            "need more than h2 = {h2} sub-paths, got {n_subpaths}"
        )));
    }
    Ok(EnsembleSet { h2, n_subpaths })
}
