//! Truncated signatures of piecewise-linear paths.
//!
//! Level `k` of a [`TruncatedTensor`] is stored densely as `d^k` numbers, with
//! words ordered lexicographically (word `(i_1, …, i_k)` lives at index
//! `i_1 d^{k-1} + … + i_k`).

use crate::error::{Error, Result};
use crate::streams::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedTensor {
    dim: usize,
    levels: Vec<Vec<f64>>,
}

impl TruncatedTensor {
    /// The unit `(1, 0, 0, …)`.
    pub fn unit(dim: usize, order: usize) -> Self {
        let levels = (0..=order)
            .map(|k| {
                let mut v = vec![0.0; dim.pow(k as u32)];
                if k == 0 {
                    v[0] = 1.0;
                }
                v
            })
            .collect();
        TruncatedTensor { dim, levels }
    }

    /// Build from explicit levels; level `k` must hold `dim^k` entries.
    pub fn from_levels(dim: usize, levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::shape("at least level 0 is required"));
        }
        for (k, l) in levels.iter().enumerate() {
            if l.len() != dim.pow(k as u32) {
                return Err(Error::shape(format!(
                    "level {k} has {} entries, expected {}",
                    l.len(),
                    dim.pow(k as u32)
                )));
            }
        }
        Ok(TruncatedTensor { dim, levels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    /// Euclidean norm of level `k`.
    pub fn level_norm(&self, k: usize) -> f64 {
        self.levels[k].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// All levels from `from` upwards, concatenated.
    pub fn flatten_from(&self, from: usize) -> Vec<f64> {
        self.levels[from..].concat()
    }

    /// Level-wise inner product `Σ_k ⟨a_k, b_k⟩`.
    pub fn dot(&self, other: &TruncatedTensor) -> Result<f64> {
        check_compatible(self, other)?;
        Ok(self
            .levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum())
    }

    fn zeros_like(&self) -> Self {
        TruncatedTensor {
            dim: self.dim,
            levels: self.levels.iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }
}

/// Number of entries in levels `0..=order` for base dimension `dim`.
pub fn tensor_size(dim: usize, order: usize) -> usize {
    (0..=order).map(|k| dim.pow(k as u32)).sum()
}

fn check_compatible(a: &TruncatedTensor, b: &TruncatedTensor) -> Result<()> {
    if a.dim != b.dim || a.order() != b.order() {
        return Err(Error::shape(format!(
            "tensor series (d={}, M={}) and (d={}, M={}) are incompatible",
            a.dim,
            a.order(),
            b.dim,
            b.order()
        )));
    }
    Ok(())
}

/// Tensor exponential truncated at `order`: level `k` is `v^{⊗k} / k!`.
pub fn tensor_exp(v: &[f64], order: usize) -> Result<TruncatedTensor> {
    if order < 1 {
        return Err(Error::arg("truncation order must be at least 1"));
    }
    if v.is_empty() {
        return Err(Error::shape("increment must have positive dimension"));
    }
    let mut levels = Vec::with_capacity(order + 1);
    levels.push(vec![1.0]);
    for k in 1..=order {
        let prev: &Vec<f64> = &levels[k - 1];
        let mut next = Vec::with_capacity(prev.len() * v.len());
        for &p in prev {
            for &x in v {
                next.push(p * x / k as f64);
            }
        }
        levels.push(next);
    }
    Ok(TruncatedTensor {
        dim: v.len(),
        levels,
    })
}

/// Truncated tensor product: level `i` is `Σ_l a_l ⊗ b_{i-l}`.
pub fn chen_product(a: &TruncatedTensor, b: &TruncatedTensor) -> Result<TruncatedTensor> {
    check_compatible(a, b)?;
    let mut out = a.zeros_like();
    for (i, target) in out.levels.iter_mut().enumerate() {
        for l in 0..=i {
            let (left, right) = (&a.levels[l], &b.levels[i - l]);
            let stride = right.len();
            for (p, &x) in left.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &mut target[p * stride..(p + 1) * stride];
                for (t, &y) in row.iter_mut().zip(right) {
                    *t += x * y;
                }
            }
        }
    }
    Ok(out)
}

/// Signature of the piecewise-linear path through the rows of a row-major
/// `n × p` buffer.
pub(crate) fn signature_of_rows(p: usize, data: &[f64], order: usize) -> Result<TruncatedTensor> {
    let n = data.len() / p;
    if n < 2 {
        return Err(Error::arg("signature needs at least 2 points"));
    }
    let mut sig = TruncatedTensor::unit(p, order);
    let mut inc = vec![0.0; p];
    for i in 1..n {
        for c in 0..p {
            inc[c] = data[i * p + c] - data[(i - 1) * p + c];
        }
        sig = chen_product(&sig, &tensor_exp(&inc, order)?)?;
    }
    Ok(sig)
}

/// Truncated signature of the linear interpolation of `stream`; with
/// `include_time` the timestamp becomes channel 0.
pub fn truncated_signature(stream: &Stream, order: usize, include_time: bool) -> Result<TruncatedTensor> {
    let (p, data) = stream.channels(include_time, 1.0);
    signature_of_rows(p, &data, order)
}

/// Level-wise mean of the members' signatures.
pub fn expected_signature(ensemble: &[Stream], order: usize, include_time: bool) -> Result<TruncatedTensor> {
    let first = ensemble
        .first()
        .ok_or_else(|| Error::arg("expected signature of an empty ensemble"))?;
    let sigs = crate::exec::try_map(ensemble, |s| truncated_signature(s, order, include_time))?;
    let mut acc = TruncatedTensor::unit(first.dim() + usize::from(include_time), order).zeros_like();
    for s in &sigs {
        check_compatible(&acc, s)?;
        for (a, b) in acc.levels.iter_mut().zip(&s.levels) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    let n = sigs.len() as f64;
    for l in &mut acc.levels {
        for x in l.iter_mut() {
            *x /= n;
        }
    }
    Ok(acc)
}

/// Expanding-window signature path over a row buffer: row `i` holds levels
/// `1..=order` of the signature of rows `0..=i`.
pub(crate) fn lift_rows(p: usize, data: &[f64], order: usize) -> Result<(usize, Vec<f64>)> {
    let n = data.len() / p;
    let width = tensor_size(p, order) - 1;
    let mut out = Vec::with_capacity(n * width);
    let mut sig = TruncatedTensor::unit(p, order);
    out.extend(std::iter::repeat_n(0.0, width));
    let mut inc = vec![0.0; p];
    for i in 1..n {
        for c in 0..p {
            inc[c] = data[i * p + c] - data[(i - 1) * p + c];
        }
        sig = chen_product(&sig, &tensor_exp(&inc, order)?)?;
        out.extend(sig.flatten_from(1));
    }
    Ok((width, out))
}

/// Stream of expanding-window signatures (level 0 dropped) on the same
/// timestamps as the input. The first value is the zero vector.
pub fn signature_lift(stream: &Stream, order: usize) -> Result<Stream> {
    if order < 1 {
        return Err(Error::arg("truncation order must be at least 1"));
    }
    let (width, values) = lift_rows(stream.dim(), stream.values(), order)?;
    Stream::from_flat(stream.times().to_vec(), values, width)
}
