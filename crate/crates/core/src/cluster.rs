//! Pseudo domain labels from agglomerative clustering of domain features.
//!
//! Clustering starts from singletons and repeatedly merges the closest pair
//! of clusters until `k` remain. A cluster is identified by its smallest
//! member row; ties in linkage distance go to the lexicographically smallest
//! `(first, second)` identifier pair. Cluster-to-cluster distances are kept
//! up to date with the Lance-Williams recurrences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{contract, Error, Result};
use crate::exec::{self, Mode};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl Linkage {
    pub const ALL: [Linkage; 3] = [Linkage::Single, Linkage::Complete, Linkage::Average];

    pub fn name(self) -> &'static str {
        match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => contract(format!(
                "unknown linkage '{other}' (expected single, complete or average)"
            )),
        }
    }
}

/// Symmetric Euclidean distance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distances between all rows of `features: [N, C]`.
pub fn pairwise_distances(features: &Tensor) -> DistanceMatrix {
    pairwise_distances_with(Mode::default(), features)
}

pub fn pairwise_distances_with(mode: Mode, features: &Tensor) -> DistanceMatrix {
    let n = features.rows();
    let rows: Vec<Vec<f64>> = exec::map_range(mode, n, |i| {
        (0..n).map(|j| euclidean(features.row(i), features.row(j))).collect()
    });
    DistanceMatrix {
        n,
        data: rows.concat(),
    }
}

/// Cluster id per row, ids in `[0, k)` numbered by first occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoDomainLabels {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl PseudoDomainLabels {
    /// Renumbers arbitrary ids by order of first appearance.
    pub fn from_assignment(raw: &[usize], k: usize) -> Self {
        let mut map: Vec<(usize, usize)> = Vec::new();
        let labels = raw
            .iter()
            .map(|&r| match map.iter().find(|(from, _)| *from == r) {
                Some(&(_, to)) => to,
                None => {
                    map.push((r, map.len()));
                    map.len() - 1
                }
            })
            .collect();
        Self { labels, k }
    }

    pub fn distinct(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Rows grouped by label.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.distinct()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// One merge step: clusters identified by their smallest member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub first: usize,
    pub second: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agglomeration {
    pub labels: PseudoDomainLabels,
    pub merges: Vec<Merge>,
    pub linkage: Linkage,
}

/// Full merge record down to `k` clusters.
pub fn agglomerate(dist: &DistanceMatrix, k: usize, linkage: Linkage) -> Result<Agglomeration> {
    let n = dist.len();
    if k == 0 || k > n {
        return contract(format!("cluster count k = {k} must lie in [1, {n}]"));
    }
    let mut d = dist.data.clone();
    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut owner: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - k);

    while active.len() > k {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let v = d[a * n + b];
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        if best.1 == usize::MAX {
            // only non-finite distances remain; fall back to the first pair
            best = (f64::INFINITY, active[0], active[1]);
        }
        let (dist_ab, a, b) = best;
        for &c in &active {
            if c == a || c == b {
                continue;
            }
            let (dac, dbc) = (d[a * n + c], d[b * n + c]);
            let merged = match linkage {
                Linkage::Single => dac.min(dbc),
                Linkage::Complete => dac.max(dbc),
                Linkage::Average => {
                    (size[a] as f64 * dac + size[b] as f64 * dbc) / (size[a] + size[b]) as f64
                }
            };
            d[a * n + c] = merged;
            d[c * n + a] = merged;
        }
        size[a] += size[b];
        active.retain(|&c| c != b);
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        merges.push(Merge {
            first: a,
            second: b,
            distance: dist_ab,
        });
    }

    Ok(Agglomeration {
        labels: PseudoDomainLabels::from_assignment(&owner, k),
        merges,
        linkage,
    })
}

pub fn agglomerative_cluster(dist: &DistanceMatrix, k: usize, linkage: Linkage) -> Result<PseudoDomainLabels> {
    Ok(agglomerate(dist, k, linkage)?.labels)
}

/// Clusters rows of detached domain features into `k` pseudo domains.
pub fn assign_pseudo_domains(domain_features: &Tensor, k: usize, linkage: Linkage) -> Result<PseudoDomainLabels> {
    let n = domain_features.rows();
    if n < k {
        return contract(format!(
            "cannot form {k} pseudo domains from {n} candidates; lower k or enlarge the batch"
        ));
    }
    agglomerative_cluster(&pairwise_distances(domain_features), k, linkage)
}

/// Fraction of rows on which `predicted` agrees with `truth` under the best
/// one-to-one matching of label ids.
pub fn best_match_agreement(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape {
            op: "best_match_agreement",
            left: vec![predicted.len()],
            right: vec![truth.len()],
        });
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let kp = predicted.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let (rows, cols, swap) = if kp >= kt { (kp, kt, false) } else { (kt, kp, true) };
    if cols > 20 {
        return contract(format!("best_match_agreement supports at most 20 labels on the smaller side, got {cols}"));
    }
    let mut counts = vec![vec![0usize; cols]; rows];
    for (&p, &t) in predicted.iter().zip(truth) {
        let (r, c) = if swap { (t, p) } else { (p, t) };
        counts[r][c] += 1;
    }
    // dp over subsets of columns already matched
    let full = 1usize << cols;
    let mut dp = vec![usize::MIN; full];
    let mut reachable = vec![false; full];
    reachable[0] = true;
    for row in &counts {
        let mut next = dp.clone();
        let mut next_reach = reachable.clone();
        for mask in 0..full {
            if !reachable[mask] {
                continue;
            }
            for (c, &cnt) in row.iter().enumerate() {
                if mask & (1 << c) == 0 {
                    let m2 = mask | (1 << c);
                    let v = dp[mask] + cnt;
                    if !next_reach[m2] || v > next[m2] {
                        next[m2] = v;
                        next_reach[m2] = true;
                    }
                }
            }
        }
        dp = next;
        reachable = next_reach;
    }
    let best = (0..full).filter(|&m| reachable[m]).map(|m| dp[m]).max().unwrap_or(0);
    Ok(best as f64 / predicted.len() as f64)
}

/// Assignment `row -> column` of a square cost matrix with minimal total
/// cost. Exact for up to 16 rows, greedy beyond that.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n > 16 {
        let mut taken = vec![false; n];
        return cost
            .iter()
            .map(|row| {
                let j = (0..n)
                    .filter(|&j| !taken[j])
                    .min_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .expect("square matrix");
                taken[j] = true;
                j
            })
            .collect();
    }
    let full = 1usize << n;
    let mut best = vec![f64::INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        if !best[mask].is_finite() && mask != 0 {
            continue;
        }
        let row = mask.count_ones() as usize;
        if row == n {
            continue;
        }
        for j in 0..n {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << j);
                let v = best[mask] + cost[row][j];
                if v < best[next] {
                    best[next] = v;
                    choice[next] = j;
                }
            }
        }
    }
    let mut out = vec![0; n];
    let mut mask = full - 1;
    for row in (0..n).rev() {
        let j = choice[mask];
        out[row] = j;
        mask &= !(1 << j);
    }
    out
}

/// Keeps pseudo domain ids stable from batch to batch.
///
/// Per-batch clustering names clusters by first occurrence, so the same
/// latent domain can get a different id in every batch. The aligner keeps a
/// running centroid per id and renames each batch's clusters to the
/// centroids they best match, then moves those centroids toward the new
/// cluster means.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidAligner {
    pub centroids: Vec<Vec<f64>>,
    /// Weight of the old centroid in each update.
    pub momentum: f64,
}

impl CentroidAligner {
    pub fn new(momentum: f64) -> Self {
        Self {
            centroids: Vec::new(),
            momentum,
        }
    }

    pub fn align(&mut self, features: &Tensor, labels: &PseudoDomainLabels) -> Result<PseudoDomainLabels> {
        if labels.labels.len() != features.rows() {
            return Err(Error::Shape {
                op: "CentroidAligner::align",
                left: vec![features.rows()],
                right: vec![labels.labels.len()],
            });
        }
        let k = labels.k;
        let c = features.cols();
        let mut means = vec![vec![0.0; c]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.labels.iter().enumerate() {
            counts[l] += 1;
            means[l].iter_mut().zip(features.row(i)).for_each(|(m, x)| *m += x);
        }
        for (m, &n) in means.iter_mut().zip(&counts) {
            if n > 0 {
                m.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        if self.centroids.len() != k || self.centroids.iter().any(|ct| ct.len() != c) {
            self.centroids = means;
            return Ok(labels.clone());
        }
        let cost: Vec<Vec<f64>> = means
            .iter()
            .map(|m| self.centroids.iter().map(|ct| euclidean(m, ct).powi(2)).collect())
            .collect();
        let to = min_cost_assignment(&cost);
        for (from, &slot) in to.iter().enumerate() {
            if counts[from] > 0 {
                let mu = self.momentum;
                self.centroids[slot]
                    .iter_mut()
                    .zip(&means[from])
                    .for_each(|(ct, m)| *ct = mu * *ct + (1.0 - mu) * m);
            }
        }
        Ok(PseudoDomainLabels {
            labels: labels.labels.iter().map(|&l| to[l]).collect(),
            k,
        })
    }
}
