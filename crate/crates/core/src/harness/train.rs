//! Training loop and periodic evaluation.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::cluster::{assign_pseudo_domains, best_match_agreement, CentroidAligner};
use crate::detection::LossBreakdown;
use crate::error::{contract, Error, Result};
use crate::gate::gate_and_separate;
use crate::harness::config::TrainConfig;
use crate::harness::model::{composed_loss, LossContext, Model};
use crate::harness::probe::probe_domain_accuracy;
use crate::harness::silhouette::silhouette;
use crate::harness::synthetic::{generate_rows, generate_synthetic_batch, FeatureBatch};
use crate::nn::{Parameters, Sgd};
use crate::random::{derive_seed, rng};

const INIT_TAG: u64 = 0x494e_4954;
const EVAL_TAG: u64 = 0x4556_414c;
const BATCH_TAG: u64 = 0x4241_5443;
const SAMPLE_TAG: u64 = 0x5341_4d50;
const PROBE_TAG: u64 = 0x5052_4f42;

/// Old-centroid weight of the per-scale pseudo label aligners.
pub const ALIGN_MOMENTUM: f64 = 0.9;

/// Evaluation snapshot. Probe, silhouette, agreement and accuracy values
/// are means over scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Loss parts on the fixed evaluation batch.
    pub losses: LossBreakdown,
    /// Domain probe accuracy on object features.
    pub probe_obj: f64,
    /// Domain probe accuracy on raw candidate features.
    pub probe_cand: f64,
    /// Class silhouette of object features over object candidates.
    pub silhouette: f64,
    /// Best-match agreement of per-batch domain-feature clusters with the
    /// planted domains.
    pub agreement: f64,
    pub class_accuracy: f64,
}

impl MetricsRecord {
    /// Head-level score used to rank ablation variants: the mean of class
    /// accuracy and class silhouette.
    pub fn eval_metric(&self) -> f64 {
        0.5 * (self.class_accuracy + self.silhouette)
    }
}

/// Fixed held-out candidates, one batch per scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub batches: Vec<FeatureBatch>,
    pub seed: u64,
}

impl EvalSet {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let seed = derive_seed(config.seed, EVAL_TAG);
        let batches = (0..config.dims.len())
            .map(|s| generate_rows(config, s, config.eval_size, seed))
            .collect::<Result<_>>()?;
        Ok(Self { batches, seed })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub model: Model,
    pub eval_set: EvalSet,
}

/// Object and domain features of every row of `batch`, plus class logits of
/// the object rows.
pub struct Separation {
    pub object: Tensor,
    pub domain: Tensor,
    pub class_logits: Tensor,
}

pub fn separate_batch(model: &Model, batch: &FeatureBatch) -> Result<Separation> {
    let scale = &model.scales[batch.scale];
    let mut g = Graph::new();
    let x = g.constant(batch.features.clone());
    let gate = scale.gate.bind(&mut g);
    let sep = gate_and_separate(&mut g, x, &gate)?;
    let objects = g.select_rows(sep.object, batch.object_rows())?;
    let cls = scale.classifier.bind(&mut g);
    let logits = cls.forward(&mut g, objects)?;
    Ok(Separation {
        object: g.detach(sep.object),
        domain: g.detach(sep.domain),
        class_logits: g.detach(logits),
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Clusters `domain` in consecutive chunks of `batch_size` rows and returns
/// the mean best-match agreement with `truth`.
pub fn chunked_agreement(domain: &Tensor, truth: &[usize], batch_size: usize, k: usize, config: &TrainConfig) -> Result<f64> {
    let n = domain.rows();
    let mut scores = Vec::new();
    let mut start = 0;
    while start + batch_size.max(k) <= n {
        let rows: Vec<usize> = (start..start + batch_size).collect();
        let labels = assign_pseudo_domains(&domain.select_rows(&rows), k, config.linkage)?;
        let t: Vec<usize> = rows.iter().map(|&i| truth[i]).collect();
        scores.push(best_match_agreement(&labels.labels, &t)?);
        start += batch_size;
    }
    if scores.is_empty() {
        return contract("evaluation set smaller than one batch");
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn evaluate(model: &Model, config: &TrainConfig, eval: &EvalSet, epoch: usize) -> Result<MetricsRecord> {
    let scales = eval.batches.len() as f64;
    let (mut probe_obj, mut probe_cand, mut sil, mut agree, mut acc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for batch in &eval.batches {
        let sep = separate_batch(model, batch)?;
        let truth = batch.true_domain.as_ref().expect("synthetic batches carry domains");
        let probe_seed = derive_seed(eval.seed, PROBE_TAG);
        probe_obj += probe_domain_accuracy(&sep.object, truth, probe_seed)?;
        probe_cand += probe_domain_accuracy(&batch.features, truth, probe_seed)?;
        let rows = batch.object_rows();
        let classes: Vec<usize> = rows.iter().map(|&i| batch.class_labels[i]).collect();
        sil += silhouette(&sep.object.select_rows(&rows), &classes)?;
        agree += chunked_agreement(&sep.domain, truth, config.batch_size, config.clusters, config)?;
        let correct = (0..rows.len())
            .filter(|&i| argmax(sep.class_logits.row(i)) == classes[i])
            .count();
        acc += correct as f64 / rows.len() as f64;
    }

    let head: Vec<usize> = (0..config.batch_size).collect();
    let batches: Vec<FeatureBatch> = eval.batches.iter().map(|b| b.subset(&head)).collect();
    let losses = batch_breakdown(model, config, &batches, derive_seed(eval.seed, SAMPLE_TAG))?;

    Ok(MetricsRecord {
        epoch,
        losses,
        probe_obj: probe_obj / scales,
        probe_cand: probe_cand / scales,
        silhouette: sil / scales,
        agreement: agree / scales,
        class_accuracy: acc / scales,
    })
}

fn contexts(n: usize, seed: u64) -> Vec<LossContext> {
    (0..n).map(|s| LossContext::fresh(derive_seed(seed, s as u64))).collect()
}

fn batch_breakdown(model: &Model, config: &TrainConfig, batches: &[FeatureBatch], seed: u64) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xs: Vec<Var> = batches.iter().map(|b| g.constant(b.features.clone())).collect();
    let (_, breakdown, _) = composed_loss(&mut g, config, &bound, &xs, batches, &contexts(batches.len(), seed))?;
    Ok(breakdown)
}

/// Per-scale pseudo domain labels for `batches`, aligned across batches.
pub fn aligned_pseudo_labels(
    model: &Model,
    config: &TrainConfig,
    batches: &[FeatureBatch],
    aligners: &mut [CentroidAligner],
) -> Result<Vec<Vec<usize>>> {
    batches
        .iter()
        .zip(aligners.iter_mut())
        .map(|(batch, aligner)| {
            let domain = separate_batch(model, batch)?.domain;
            let raw = assign_pseudo_domains(&domain, config.clusters, config.linkage)?;
            Ok(aligner.align(&domain, &raw)?.labels)
        })
        .collect()
}

/// One forward, backward and optimizer step on `batches`.
pub fn train_step(
    model: &mut Model,
    sgd: &mut Sgd,
    aligners: &mut [CentroidAligner],
    config: &TrainConfig,
    batches: &[FeatureBatch],
    sample_seed: u64,
) -> Result<LossBreakdown> {
    let pseudo = aligned_pseudo_labels(model, config, batches, aligners)?;
    let mut ctx = contexts(batches.len(), sample_seed);
    for (c, p) in ctx.iter_mut().zip(pseudo) {
        c.pseudo_labels = Some(p);
    }
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xs: Vec<Var> = batches.iter().map(|b| g.constant(b.features.clone())).collect();
    let (total, breakdown, _) = composed_loss(&mut g, config, &bound, &xs, batches, &ctx)?;
    let grads = g.backward(total)?;
    let vars: Vec<Var> = bound.iter().flat_map(|b| b.vars()).collect();
    sgd.step(model.parameters_mut(), &vars, &grads)?;
    Ok(breakdown)
}

/// Seed of batch `index` in epoch `epoch` (1-based).
pub fn batch_seed(config: &TrainConfig, epoch: usize, index: usize) -> u64 {
    derive_seed(
        derive_seed(config.seed, BATCH_TAG),
        (epoch * config.batches_per_epoch + index) as u64,
    )
}

pub fn train_run(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = Model::init(&mut rng(derive_seed(config.seed, INIT_TAG)), config);
    let mut sgd = Sgd::new(config.learning_rate, config.momentum, config.weight_decay);
    let mut aligners = vec![CentroidAligner::new(ALIGN_MOMENTUM); config.dims.len()];
    let eval_set = EvalSet::new(config)?;
    let mut records = vec![evaluate(&model, config, &eval_set, 0)?];
    for epoch in 1..=config.epochs {
        for b in 0..config.batches_per_epoch {
            let seed = batch_seed(config, epoch, b);
            let step = (0..config.dims.len())
                .map(|s| generate_synthetic_batch(config, s, seed))
                .collect::<Result<Vec<_>>>()
                .and_then(|batches| train_step(&mut model, &mut sgd, &mut aligners, config, &batches, derive_seed(seed, SAMPLE_TAG)));
            step.map_err(|e| Error::Batch {
                epoch,
                batch: b,
                source: Box::new(e),
            })?;
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            records.push(evaluate(&model, config, &eval_set, epoch)?);
        }
    }
    Ok(TrainOutcome {
        records,
        model,
        eval_set,
    })
}

/// Metric history of one run.
pub fn train(config: &TrainConfig) -> Result<Vec<MetricsRecord>> {
    Ok(train_run(config)?.records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            dims: vec![6, 8],
            epochs: 2,
            batch_size: 24,
            batches_per_epoch: 2,
            eval_size: 48,
            eval_every: 1,
            clusters: 3,
            instances: 4,
            num_domains_planted: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_gives_initial_record() {
        let c = TrainConfig { epochs: 0, ..small() };
        let r = train(&c).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].epoch, 0);
    }

    #[test]
    fn runs_are_deterministic_and_finite() {
        let a = train(&small()).unwrap();
        assert_eq!(a, train(&small()).unwrap());
        assert_eq!(a.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 1, 2]);
        for r in &a {
            let l = r.losses;
            let expect = l.cls + l.conf + l.reg + 0.5 * l.con + 0.1 * l.dom;
            assert!((l.total - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            for v in [r.probe_obj, r.probe_cand, r.agreement, r.class_accuracy] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!((-1.0..=1.0).contains(&r.silhouette));
        }
    }

    #[test]
    fn weights_off_leave_discriminator_untouched() {
        let c = TrainConfig {
            lambda_con: 0.0,
            alpha_dom: 0.0,
            weight_decay: 0.0,
            ..small()
        };
        let before = Model::init(&mut rng(derive_seed(c.seed, INIT_TAG)), &c);
        let after = train_run(&c).unwrap().model;
        for (b, a) in before.scales.iter().zip(&after.scales) {
            assert_eq!(b.discriminator, a.discriminator);
            assert_ne!(b.gate, a.gate);
        }
        let r = train(&c).unwrap();
        assert!(r.iter().all(|m| m.losses.con > 0.0 && m.losses.dom > 0.0));
    }
}
