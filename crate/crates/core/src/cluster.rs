//! Offline regime clustering: pairwise MMD distances between ensembles and
//! agglomerative hierarchical clustering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigkernel::{gram_symmetric, KernelSpec, Prepared};
use crate::streams::EnsembleSet;

/// Symmetric matrix of MMD distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        DistanceMatrix { n, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Biased-MMD distances between all pairs of ensembles.
///
/// The sub-path Gram matrix is computed once; block sums of every ensemble
/// pair then come from its 2-D prefix sums in constant time.
pub fn distance_matrix(subpaths: &[Prepared], ensembles: &EnsembleSet, spec: &KernelSpec) -> Result<DistanceMatrix> {
    if ensembles.len() < 2 {
        return Err(Error::arg("distance matrix needs at least two ensembles"));
    }
    if subpaths.len() != ensembles.n_subpaths {
        return Err(Error::shape("ensemble layout does not match the sub-path count"));
    }
    let g = gram_symmetric(subpaths, spec)?;
    let n = g.rows;
    // prefix[(i, j)] = Σ_{a<i, b<j} g(a, b)
    let w = n + 1;
    let mut prefix = vec![0.0; w * w];
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += g.get(i, j);
            prefix[(i + 1) * w + j + 1] = prefix[i * w + j + 1] + row;
        }
    }
    let h = ensembles.h2;
    let block = |a: usize, b: usize| -> f64 {
        prefix[(a + h) * w + b + h] - prefix[a * w + b + h] - prefix[(a + h) * w + b] + prefix[a * w + b]
    };
    let hh = (h * h) as f64;
    let own: Vec<f64> = (0..ensembles.len()).map(|a| block(a, a) / hh).collect();
    let d = DistanceMatrix::from_fn(ensembles.len(), |a, b| {
        (own[a] + own[b] - 2.0 * block(a, b) / hh).max(0.0).sqrt()
    });
    if d.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite distance".into()));
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linkage {
    Max,
    Min,
    Average,
}

/// One merge step: clusters `a < b` (by smallest member) joined at `height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    /// Label per ensemble, numbered by first appearance.
    pub labels: Vec<usize>,
    pub k: usize,
    pub linkage: Linkage,
    pub dendrogram: Vec<Merge>,
}

/// Bottom-up merging of the closest pair of clusters until `k` remain. Ties
/// go to the pair with the smallest indices; a cluster is indexed by its
/// smallest member.
pub fn agglomerate(d: &DistanceMatrix, k: usize, linkage: Linkage) -> Result<ClusterAssignment> {
    let n = d.n;
    if k == 0 || k > n {
        return Err(Error::arg(format!("cluster count must be in [1, {n}], got {k}")));
    }
    let mut dist = d.data.clone();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut dendrogram = Vec::with_capacity(n - k);
    for _ in 0..n - k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && dist[i * n + j] < best.0 {
                    best = (dist[i * n + j], i, j);
                }
            }
        }
        let (height, a, b) = best;
        // Lance-Williams update into slot a.
        for c in 0..n {
            if !active[c] || c == a || c == b {
                continue;
            }
            let (da, db) = (dist[a * n + c], dist[b * n + c]);
            let v = match linkage {
                Linkage::Max => da.max(db),
                Linkage::Min => da.min(db),
                Linkage::Average => (size[a] as f64 * da + size[b] as f64 * db) / (size[a] + size[b]) as f64,
            };
            dist[a * n + c] = v;
            dist[c * n + a] = v;
        }
        active[b] = false;
        size[a] += size[b];
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        dendrogram.push(Merge { a, b, height, size: size[a] });
    }
    let mut relabel = vec![usize::MAX; n];
    let mut next = 0;
    let labels = owner
        .iter()
        .map(|&o| {
            if relabel[o] == usize::MAX {
                relabel[o] = next;
                next += 1;
            }
            relabel[o]
        })
        .collect();
    Ok(ClusterAssignment {
        labels,
        k,
        linkage,
        dendrogram,
    })
}

/// Mean ensemble label over the ensembles containing each sub-path.
pub fn assign_subpath_labels(assignment: &ClusterAssignment, ensembles: &EnsembleSet) -> Result<Vec<Option<f64>>> {
    if assignment.labels.len() != ensembles.len() {
        return Err(Error::shape(format!(
            "{} labels for {} ensembles",
            assignment.labels.len(),
            ensembles.len()
        )));
    }
    Ok(crate::detect::DetectionReport::per_subpath(ensembles, |e| assignment.labels[e] as f64))
}

/// Relabeling `perm` (predicted label `p` becomes `perm[p]`) that maximizes
/// agreement with `truth`, with its accuracy. Ties keep the first
/// permutation in lexicographic order.
pub fn best_permutation(predicted: &[usize], truth: &[usize], k: usize) -> Result<(Vec<usize>, f64)> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::shape("label vectors must be non-empty and aligned"));
    }
    if k > 8 {
        return Err(Error::arg("permutation search is limited to 8 labels"));
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (perm.clone(), -1.0f64);
    loop {
        let hits = predicted
            .iter()
            .zip(truth)
            .filter(|(&p, &t)| p < k && perm[p] == t)
            .count();
        let acc = hits as f64 / predicted.len() as f64;
        if acc > best.1 {
            best = (perm.clone(), acc);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best)
}

/// Best accuracy of `predicted` against `truth` over all relabelings of the
/// `k` predicted labels.
pub fn permutation_accuracy(predicted: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    best_permutation(predicted, truth, k).map(|b| b.1)
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
