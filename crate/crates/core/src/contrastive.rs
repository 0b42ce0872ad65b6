//! Object-level contrastive learning with k-instance sampling.
//!
//! Each class contributes at most `K` randomly chosen candidates to a batch
//! sample. For every sampled anchor `i` the candidate set is the rest of the
//! sample and the positives are the candidates sharing its class:
//!
//! ```text
//! L_i = 1/(K+1) * sum_{j in P_i} -log( exp(x_i . x_j) / sum_{m in X_i} exp(x_i . x_m) )
//! L   = mean of L_i over anchors with at least one positive
//! ```
//!
//! Features are standardized per dimension across the batch first and the
//! similarity is a plain dot product (no temperature).

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::random::rng;

/// Variance floor inside the square root of [`batch_normalize`].
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorSet {
    pub anchor: usize,
    /// Every other sampled index.
    pub candidates: Vec<usize>,
    /// Candidates with the anchor's class.
    pub positives: Vec<usize>,
}

/// Batch-level sample and the per-anchor sets derived from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledSet {
    /// Sampled row indices, ascending.
    pub selected: Vec<usize>,
    pub anchors: Vec<AnchorSet>,
    /// Cap per class; `None` when every candidate was kept.
    pub instances_per_class: Option<usize>,
    pub seed: u64,
}

impl SampledSet {
    fn from_selection(labels: &[usize], mut selected: Vec<usize>, cap: Option<usize>, seed: u64) -> Self {
        selected.sort_unstable();
        let anchors = selected
            .iter()
            .map(|&a| {
                let candidates: Vec<usize> = selected.iter().copied().filter(|&j| j != a).collect();
                let positives = candidates
                    .iter()
                    .copied()
                    .filter(|&j| labels[j] == labels[a])
                    .collect();
                AnchorSet {
                    anchor: a,
                    candidates,
                    positives,
                }
            })
            .collect();
        Self {
            selected,
            anchors,
            instances_per_class: cap,
            seed,
        }
    }

    /// Anchors that have at least one positive.
    pub fn effective_anchors(&self) -> usize {
        self.anchors.iter().filter(|a| !a.positives.is_empty()).count()
    }
}

fn group_by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    groups
}

/// Keeps `min(K, class size)` uniformly chosen rows of every class.
pub fn k_instance_sample(labels: &[usize], instances: usize, seed: u64) -> Result<SampledSet> {
    if instances == 0 {
        return contract("k-instance sampling needs K >= 1");
    }
    if labels.len() < 2 {
        return contract(format!(
            "k-instance sampling needs at least 2 candidates, got {}",
            labels.len()
        ));
    }
    let mut r = rng(seed);
    let mut selected = Vec::new();
    for members in group_by_class(labels).values() {
        let take = instances.min(members.len());
        selected.extend(index::sample(&mut r, members.len(), take).into_iter().map(|k| members[k]));
    }
    Ok(SampledSet::from_selection(labels, selected, Some(instances), seed))
}

/// Uncapped sample: every candidate is an anchor.
pub fn full_sample(labels: &[usize]) -> Result<SampledSet> {
    if labels.len() < 2 {
        return contract(format!(
            "contrastive sampling needs at least 2 candidates, got {}",
            labels.len()
        ));
    }
    Ok(SampledSet::from_selection(labels, (0..labels.len()).collect(), None, 0))
}

/// Per-dimension standardization across rows with population variance:
/// `(x - mean) / sqrt(var + eps)`.
pub fn batch_normalize(g: &mut Graph, features: Var, epsilon: f64) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 2 {
        return contract(format!("batch_normalize expects [N, C], got {shape:?}"));
    }
    if shape[0] < 2 {
        return contract(format!("batch_normalize needs N >= 2, got {}", shape[0]));
    }
    let mean = g.mean_axis0(features)?;
    let neg_mean = g.neg(mean);
    let centered = g.add_row(features, neg_mean)?;
    let sq = g.mul(centered, centered)?;
    let var = g.mean_axis0(sq)?;
    let var = g.add_scalar(var, epsilon);
    let inv_std = g.powf(var, -0.5);
    g.mul_row(centered, inv_std)
}

/// Per-anchor normalizer in front of the positive sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizer {
    /// `1 / (K + 1)` regardless of how many positives were drawn.
    #[default]
    Fixed,
    /// `1 / (|P_i| + 1)`.
    Adaptive,
}

/// k-instance supervised contrastive loss over `features: [N, C]`.
///
/// `sample` indexes rows of `features`. Anchors without positives are
/// skipped; if none remain the call fails.
pub fn k_instance_loss(
    g: &mut Graph,
    features: Var,
    sample: &SampledSet,
    instances: usize,
    normalizer: Normalizer,
) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 2 {
        return contract(format!("k_instance_loss expects [N, C], got {shape:?}"));
    }
    let n = shape[0];
    if let Some(&bad) = sample.selected.iter().find(|&&i| i >= n) {
        return Err(Error::Shape {
            op: "k_instance_loss",
            left: shape,
            right: vec![bad],
        });
    }
    let effective = sample.effective_anchors();
    if effective == 0 {
        return contract("no sampled anchor has a positive; use a larger batch or K");
    }

    let mut mask = vec![false; n * n];
    let mut lse_weight = vec![0.0; n];
    let mut pair_weight = vec![0.0; n * n];
    for a in sample.anchors.iter().filter(|a| !a.positives.is_empty()) {
        let norm = match normalizer {
            Normalizer::Fixed => instances as f64 + 1.0,
            Normalizer::Adaptive => a.positives.len() as f64 + 1.0,
        };
        let w = 1.0 / (norm * effective as f64);
        for &m in &a.candidates {
            mask[a.anchor * n + m] = true;
        }
        for &p in &a.positives {
            pair_weight[a.anchor * n + p] += w;
        }
        lse_weight[a.anchor] = w * a.positives.len() as f64;
    }

    let ft = g.transpose(features)?;
    let sim = g.matmul(features, ft)?;
    let lse = g.masked_log_sum_exp(sim, mask)?;
    let lse_term = g.mul_const(lse, Tensor::vector(lse_weight)?)?;
    let lse_total = g.sum(lse_term);
    let pos_term = g.mul_const(sim, Tensor::matrix(n, n, pair_weight)?)?;
    let pos_total = g.sum(pos_term);
    g.sub(lse_total, pos_total)
}
