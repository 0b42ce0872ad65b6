//! Per-scale heads and the composed training loss.

use crate::adversarial::{discriminator_forward, domain_loss, DomainDiscriminator};
use crate::autograd::{Graph, Tensor, Var};
use crate::cluster::{assign_pseudo_domains, PseudoDomainLabels};
use crate::contrastive::{batch_normalize, full_sample, k_instance_loss, k_instance_sample, SampledSet, DEFAULT_EPSILON};
use crate::detection::{
    binary_cross_entropy, ciou_loss_graph, cross_entropy, total_loss_graph, BoxColumns, LossBreakdown, LossNodes,
};
use crate::error::{Error, Result};
use crate::gate::{gate_and_separate, GateHead, SeparatedFeatures};
use crate::harness::config::{Sampling, TrainConfig};
use crate::harness::synthetic::FeatureBatch;
use crate::nn::{BoundLinear, BoundMlp, Linear, Parameters};
use crate::random::SeededRng;

/// Everything trainable at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleModel {
    pub gate: GateHead,
    pub discriminator: DomainDiscriminator,
    pub classifier: Linear,
    pub objectness: Linear,
    /// Predicts `(dx, dy, log dw, log dh)` relative to the anchor box.
    pub box_head: Linear,
}

impl ScaleModel {
    pub fn init(rng: &mut SeededRng, channels: usize, config: &TrainConfig) -> Self {
        Self {
            gate: GateHead::init(rng, channels, channels),
            discriminator: DomainDiscriminator::init(rng, channels, channels, config.clusters),
            classifier: Linear::init(rng, channels, config.num_classes),
            objectness: Linear::init(rng, channels, 1),
            box_head: Linear::zeros(channels, 4),
        }
    }

    pub fn channels(&self) -> usize {
        self.gate.channels()
    }
}

impl Parameters for ScaleModel {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.gate.parameters();
        p.extend(self.discriminator.parameters());
        p.extend(self.classifier.parameters());
        p.extend(self.objectness.parameters());
        p.extend(self.box_head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.gate.parameters_mut();
        p.extend(self.discriminator.parameters_mut());
        p.extend(self.classifier.parameters_mut());
        p.extend(self.objectness.parameters_mut());
        p.extend(self.box_head.parameters_mut());
        p
    }
}

/// Parameter tensors of one [`ScaleModel`].
pub const SCALE_VARS: usize = 14;

#[derive(Debug, Clone, Copy)]
pub struct BoundScale {
    pub gate: BoundMlp,
    pub discriminator: BoundMlp,
    pub classifier: BoundLinear,
    pub objectness: BoundLinear,
    pub box_head: BoundLinear,
}

impl BoundScale {
    /// Rebuilds the structure from vars in [`Parameters`] order.
    pub fn from_vars(v: &[Var]) -> Self {
        let lin = |i: usize| BoundLinear {
            weight: v[i],
            bias: v[i + 1],
        };
        let mlp = |i: usize| BoundMlp {
            hidden: lin(i),
            output: lin(i + 2),
        };
        Self {
            gate: mlp(0),
            discriminator: mlp(4),
            classifier: lin(8),
            objectness: lin(10),
            box_head: lin(12),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.gate.vars();
        v.extend(self.discriminator.vars());
        v.extend(self.classifier.vars());
        v.extend(self.objectness.vars());
        v.extend(self.box_head.vars());
        v
    }
}

/// One [`ScaleModel`] per configured feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub scales: Vec<ScaleModel>,
}

impl Model {
    pub fn init(rng: &mut SeededRng, config: &TrainConfig) -> Self {
        Self {
            scales: config.dims.iter().map(|&c| ScaleModel::init(rng, c, config)).collect(),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<BoundScale> {
        let vars: Vec<Var> = self.parameters().into_iter().map(|t| g.param(t.clone())).collect();
        bind_vars(&vars)
    }
}

/// Splits a flat var list in [`Parameters`] order into per-scale bindings.
pub fn bind_vars(vars: &[Var]) -> Vec<BoundScale> {
    vars.chunks(SCALE_VARS).map(BoundScale::from_vars).collect()
}

impl Parameters for Model {
    fn parameters(&self) -> Vec<&Tensor> {
        self.scales.iter().flat_map(|s| s.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.scales.iter_mut().flat_map(|s| s.parameters_mut()).collect()
    }
}

/// Optional frozen pieces of a loss evaluation. Anything left `None` is
/// computed from the current forward pass.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub pseudo_labels: Option<Vec<usize>>,
    pub sample: Option<SampledSet>,
    pub ciou_tradeoff: Option<Vec<f64>>,
    /// Route the discriminator through the reversal node. Off only for
    /// finite-difference checks of the composed loss.
    pub reverse: bool,
    pub sample_seed: u64,
}

impl LossContext {
    pub fn fresh(sample_seed: u64) -> Self {
        Self {
            pseudo_labels: None,
            sample: None,
            ciou_tradeoff: None,
            reverse: true,
            sample_seed,
        }
    }
}

/// Nodes and the data-dependent choices made at one scale.
#[derive(Debug, Clone)]
pub struct ScaleOutput {
    pub nodes: LossNodes,
    pub separated: SeparatedFeatures,
    pub class_logits: Var,
    pub object_rows: Vec<usize>,
    pub pseudo: PseudoDomainLabels,
    pub sample: SampledSet,
    pub ciou_tradeoff: Vec<f64>,
}

impl ScaleOutput {
    /// A context that reproduces this evaluation exactly.
    pub fn frozen(&self, reverse: bool) -> LossContext {
        LossContext {
            pseudo_labels: Some(self.pseudo.labels.clone()),
            sample: Some(self.sample.clone()),
            ciou_tradeoff: Some(self.ciou_tradeoff.clone()),
            reverse,
            sample_seed: self.sample.seed,
        }
    }
}

fn column(n: usize, f: impl Fn(usize) -> f64) -> Result<Tensor> {
    Tensor::matrix(n, 1, (0..n).map(f).collect())
}

/// Decodes box-head deltas against the anchors into corner columns.
fn decode_boxes(g: &mut Graph, deltas: Var, anchors: &[crate::detection::BBox]) -> Result<BoxColumns> {
    let n = anchors.len();
    let d: Vec<Var> = (0..4).map(|j| g.select_cols(deltas, vec![j])).collect::<Result<_>>()?;
    let aw = column(n, |i| anchors[i].width())?;
    let ah = column(n, |i| anchors[i].height())?;
    let dx = g.mul_const(d[0], aw.clone())?;
    let dy = g.mul_const(d[1], ah.clone())?;
    let cx0 = g.constant(column(n, |i| anchors[i].center().0)?);
    let cy0 = g.constant(column(n, |i| anchors[i].center().1)?);
    let cx = g.add(cx0, dx)?;
    let cy = g.add(cy0, dy)?;
    let ew = g.exp(d[2]);
    let eh = g.exp(d[3]);
    let w = g.mul_const(ew, aw.scale(0.5))?;
    let h = g.mul_const(eh, ah.scale(0.5))?;
    Ok(BoxColumns {
        x1: g.sub(cx, w)?,
        y1: g.sub(cy, h)?,
        x2: g.add(cx, w)?,
        y2: g.add(cy, h)?,
    })
}

/// The five loss parts of one scale for candidate `features`.
pub fn scale_losses(
    g: &mut Graph,
    config: &TrainConfig,
    bound: &BoundScale,
    features: Var,
    batch: &FeatureBatch,
    ctx: &LossContext,
) -> Result<ScaleOutput> {
    let sep = gate_and_separate(g, features, &bound.gate)?;

    let pseudo = match &ctx.pseudo_labels {
        Some(l) => PseudoDomainLabels {
            labels: l.clone(),
            k: config.clusters,
        },
        None => assign_pseudo_domains(&g.detach(sep.domain), config.clusters, config.linkage)?,
    };
    let domain_logits = if ctx.reverse {
        discriminator_forward(g, sep.object, &bound.discriminator, config.grl_coeff)?
    } else {
        bound.discriminator.forward(g, sep.object)?
    };
    let dom = domain_loss(g, domain_logits, &pseudo.labels, config.reduction)?;

    let object_rows = batch.object_rows();
    let classes: Vec<usize> = object_rows.iter().map(|&i| batch.class_labels[i]).collect();
    let objects = g.select_rows(sep.object, object_rows.clone())?;

    let normalized = batch_normalize(g, objects, DEFAULT_EPSILON)?;
    let sample = match &ctx.sample {
        Some(s) => s.clone(),
        None => match config.sampling {
            Sampling::KInstance => k_instance_sample(&classes, config.instances, ctx.sample_seed)?,
            Sampling::All => full_sample(&classes)?,
        },
    };
    let con = k_instance_loss(g, normalized, &sample, config.instances, config.normalizer)?;

    let class_logits = bound.classifier.forward(g, objects)?;
    let cls = cross_entropy(g, class_logits, &classes)?;

    let conf_logits = bound.objectness.forward(g, sep.object)?;
    let conf = binary_cross_entropy(g, conf_logits, &batch.objectness_targets)?;

    let deltas = bound.box_head.forward(g, objects)?;
    let anchors: Vec<_> = object_rows.iter().map(|&i| batch.pred_boxes[i]).collect();
    let gts: Vec<_> = object_rows.iter().map(|&i| batch.gt_boxes[i]).collect();
    let boxes = decode_boxes(g, deltas, &anchors)?;
    let (reg, ciou_tradeoff) = ciou_loss_graph(g, &boxes, &gts, ctx.ciou_tradeoff.as_deref())?;

    Ok(ScaleOutput {
        nodes: LossNodes { cls, conf, reg, con, dom },
        separated: sep,
        class_logits,
        object_rows,
        pseudo,
        sample,
        ciou_tradeoff,
    })
}

/// Composed loss over every scale: parts are summed across scales, then
/// weighted. `features[s]` is the candidate node of scale `s`.
pub fn composed_loss(
    g: &mut Graph,
    config: &TrainConfig,
    bound: &[BoundScale],
    features: &[Var],
    batches: &[FeatureBatch],
    contexts: &[LossContext],
) -> Result<(Var, LossBreakdown, Vec<ScaleOutput>)> {
    if bound.len() != batches.len() || features.len() != batches.len() || contexts.len() != batches.len() {
        return Err(Error::Shape {
            op: "composed_loss",
            left: vec![bound.len(), features.len(), contexts.len()],
            right: vec![batches.len()],
        });
    }
    let mut outputs = Vec::with_capacity(batches.len());
    for s in 0..batches.len() {
        outputs.push(scale_losses(g, config, &bound[s], features[s], &batches[s], &contexts[s])?);
    }
    let mut sum = outputs[0].nodes;
    for o in &outputs[1..] {
        sum = LossNodes {
            cls: g.add(sum.cls, o.nodes.cls)?,
            conf: g.add(sum.conf, o.nodes.conf)?,
            reg: g.add(sum.reg, o.nodes.reg)?,
            con: g.add(sum.con, o.nodes.con)?,
            dom: g.add(sum.dom, o.nodes.dom)?,
        };
    }
    let (total, breakdown) = total_loss_graph(g, sum, config.lambda_con, config.alpha_dom)?;
    Ok((total, breakdown, outputs))
}
