//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ldbfss_core::autograd::Tensor;
use ldbfss_core::cluster::{euclidean, Linkage, PseudoDomainLabels};
use ldbfss_core::contrastive::{Normalizer, SampledSet};

/// Recomputes every cluster-pair linkage from raw points at each step.
pub fn naive_agglomerative(points: &Tensor, k: usize, linkage: Linkage) -> (Vec<usize>, Vec<f64>) {
    let n = points.rows();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut heights = Vec::new();
    let link = |a: &[usize], b: &[usize]| {
        let ds: Vec<f64> = a
            .iter()
            .flat_map(|&i| b.iter().map(move |&j| (i, j)))
            .map(|(i, j)| euclidean(points.row(i), points.row(j)))
            .collect();
        match linkage {
            Linkage::Single => ds.iter().cloned().fold(f64::INFINITY, f64::min),
            Linkage::Complete => ds.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Linkage::Average => ds.iter().sum::<f64>() / ds.len() as f64,
        }
    };
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let d = link(&clusters[a], &clusters[b]);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (d, a, b) = best;
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters[a].sort();
        heights.push(d);
    }
    let mut raw = vec![0; n];
    for c in &clusters {
        for &i in c {
            raw[i] = c[0];
        }
    }
    (PseudoDomainLabels::from_assignment(&raw, k).labels, heights)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Contrastive loss by explicit loops: anchors, then positives, then the
/// denominator over candidates.
pub fn brute_contrastive(x: &Tensor, labels: &[usize], selected: &[usize], k: usize, normalizer: Normalizer) -> f64 {
    let mut total = 0.0;
    let mut anchors = 0;
    for &i in selected {
        let positives: Vec<usize> = selected.iter().copied().filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let norm = match normalizer {
            Normalizer::Fixed => k as f64 + 1.0,
            Normalizer::Adaptive => positives.len() as f64 + 1.0,
        };
        let mut per_anchor = 0.0;
        for &p in &positives {
            let mut denom = 0.0;
            for &m in selected {
                if m != i {
                    denom += dot(x.row(i), x.row(m)).exp();
                }
            }
            per_anchor -= (dot(x.row(i), x.row(p)).exp() / denom).ln();
        }
        total += per_anchor / norm;
    }
    total / anchors as f64
}

/// Same as [`brute_contrastive`] but reading the selection from a sample.
pub fn brute_sampled(x: &Tensor, labels: &[usize], sample: &SampledSet, k: usize, normalizer: Normalizer) -> f64 {
    brute_contrastive(x, labels, &sample.selected, k, normalizer)
}

/// Silhouette by a double loop over points.
pub fn naive_silhouette(x: &Tensor, labels: &[usize]) -> f64 {
    let n = x.rows();
    let clusters: Vec<usize> = {
        let mut c = labels.to_vec();
        c.sort();
        c.dedup();
        c
    };
    let mut total = 0.0;
    for i in 0..n {
        let own = labels.iter().filter(|&&l| l == labels[i]).count();
        if own == 1 {
            continue;
        }
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        for &c in &clusters {
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c && j != i).collect();
            let mean = members.iter().map(|&j| euclidean(x.row(i), x.row(j))).sum::<f64>() / members.len() as f64;
            if c == labels[i] {
                a = mean;
            } else {
                b = b.min(mean);
            }
        }
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// Column-wise standardization with population variance.
pub fn standardize(x: &Tensor, eps: f64) -> Tensor {
    let (n, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    for d in 0..c {
        let mean = (0..n).map(|i| x.row(i)[d]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x.row(i)[d] - mean).powi(2)).sum::<f64>() / n as f64;
        for i in 0..n {
            out.data_mut()[i * c + d] = (x.row(i)[d] - mean) / (var + eps).sqrt();
        }
    }
    out
}
