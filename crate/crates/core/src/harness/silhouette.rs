//! Silhouette score with Euclidean distance.

use crate::autograd::Tensor;
use crate::cluster::pairwise_distances_with;
use crate::error::{contract, Error, Result};
use crate::exec::{self, Mode};

pub fn silhouette(features: &Tensor, labels: &[usize]) -> Result<f64> {
    silhouette_with(Mode::default(), features, labels)
}

/// Mean of `(b - a) / max(a, b)` over points; points alone in their
/// cluster contribute 0.
pub fn silhouette_with(mode: Mode, features: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::Shape {
            op: "silhouette",
            left: vec![n],
            right: vec![labels.len()],
        });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; classes];
    labels.iter().for_each(|&l| sizes[l] += 1);
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return contract("silhouette needs at least two non-empty clusters");
    }
    let dist = pairwise_distances_with(mode, features);
    let scores = exec::map_range(mode, n, |i| {
        let own = labels[i];
        if sizes[own] == 1 {
            return 0.0;
        }
        let mut sums = vec![0.0; classes];
        for (j, &d) in dist.row(i).iter().enumerate() {
            sums[labels[j]] += d;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..classes)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m == 0.0 {
            0.0
        } else {
            (b - a) / m
        }
    });
    Ok(scores.iter().sum::<f64>() / n as f64)
}
