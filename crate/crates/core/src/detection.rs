//! Detection-side losses: class cross-entropy, objectness BCE, CIoU box
//! regression and the weighted total.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::adversarial::one_hot;
use crate::autograd::{Graph, Tensor, Var};
use crate::error::{contract, Error, Result};

/// Default weight of the contrastive term.
pub const DEFAULT_LAMBDA_CON: f64 = 0.5;
/// Default weight of the domain term.
pub const DEFAULT_ALPHA_DOM: f64 = 0.1;

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite || self.x2 <= self.x1 || self.y2 <= self.y1 {
            return contract(format!("degenerate box {self:?}"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Boxes with x and y exchanged.
    pub fn transposed(&self) -> Self {
        Self {
            x1: self.y1,
            y1: self.x1,
            x2: self.y2,
            y2: self.x2,
        }
    }
}

/// Mean softmax cross-entropy of `logits: [N, M]` against `labels`.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: shape,
            right: vec![labels.len()],
        });
    }
    let target = one_hot(labels, shape[1], "class")?;
    let logp = g.log_softmax(logits)?;
    let picked = g.mul_const(logp, target)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / labels.len() as f64))
}

/// Mean binary cross-entropy of one logit per row against 0/1 targets.
pub fn binary_cross_entropy(g: &mut Graph, logits: Var, targets: &[f64]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if g.value(logits).numel() != targets.len() {
        return Err(Error::Shape {
            op: "binary_cross_entropy",
            left: shape,
            right: vec![targets.len()],
        });
    }
    if let Some(bad) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return contract(format!("objectness target {bad} outside [0, 1]"));
    }
    // t * softplus(-z) + (1 - t) * softplus(z)
    let pos = Tensor::new(shape.clone(), targets.to_vec())?;
    let negw = Tensor::new(shape, targets.iter().map(|t| 1.0 - t).collect())?;
    let neg_z = g.neg(logits);
    let sp_neg = g.softplus(neg_z);
    let sp_pos = g.softplus(logits);
    let a = g.mul_const(sp_neg, pos)?;
    let b = g.mul_const(sp_pos, negw)?;
    let s = g.add(a, b)?;
    Ok(g.mean(s))
}

/// Predicted box corners as four `[N, 1]` columns.
#[derive(Debug, Clone, Copy)]
pub struct BoxColumns {
    pub x1: Var,
    pub y1: Var,
    pub x2: Var,
    pub y2: Var,
}

impl BoxColumns {
    /// Splits an `[N, 4]` node of corner coordinates.
    pub fn from_corners(g: &mut Graph, corners: Var) -> Result<Self> {
        let shape = g.shape(corners).to_vec();
        if shape.len() != 2 || shape[1] != 4 {
            return Err(Error::Shape {
                op: "BoxColumns::from_corners",
                left: shape,
                right: vec![4],
            });
        }
        Ok(Self {
            x1: g.select_cols(corners, vec![0])?,
            y1: g.select_cols(corners, vec![1])?,
            x2: g.select_cols(corners, vec![2])?,
            y2: g.select_cols(corners, vec![3])?,
        })
    }

    pub fn rows(&self, g: &Graph) -> usize {
        g.shape(self.x1)[0]
    }

    fn boxes(&self, g: &Graph) -> Vec<BBox> {
        let (x1, y1, x2, y2) = (g.value(self.x1), g.value(self.y1), g.value(self.x2), g.value(self.y2));
        (0..x1.numel())
            .map(|i| BBox {
                x1: x1.data()[i],
                y1: y1.data()[i],
                x2: x2.data()[i],
                y2: y2.data()[i],
            })
            .collect()
    }
}

/// CIoU components of a single box pair, in plain arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiouTerms {
    pub iou: f64,
    pub center_penalty: f64,
    pub aspect: f64,
    pub tradeoff: f64,
}

impl CiouTerms {
    pub fn compute(pred: &BBox, gt: &BBox) -> Self {
        let iw = (pred.x2.min(gt.x2) - pred.x1.max(gt.x1)).max(0.0);
        let ih = (pred.y2.min(gt.y2) - pred.y1.max(gt.y1)).max(0.0);
        let inter = iw * ih;
        let union = pred.width() * pred.height() + gt.width() * gt.height() - inter;
        let iou = inter / union;
        let (pcx, pcy) = pred.center();
        let (gcx, gcy) = gt.center();
        let rho2 = (pcx - gcx).powi(2) + (pcy - gcy).powi(2);
        let cw = pred.x2.max(gt.x2) - pred.x1.min(gt.x1);
        let ch = pred.y2.max(gt.y2) - pred.y1.min(gt.y1);
        let aspect = 4.0 / (PI * PI)
            * ((gt.width() / gt.height()).atan() - (pred.width() / pred.height()).atan()).powi(2);
        Self {
            iou,
            center_penalty: rho2 / (cw * cw + ch * ch),
            aspect,
            tradeoff: ciou_tradeoff(iou, aspect),
        }
    }

    pub fn loss(&self) -> f64 {
        1.0 - self.iou + self.center_penalty + self.tradeoff * self.aspect
    }
}

/// `v / ((1 - IoU) + v)`, and 0 when both vanish.
pub fn ciou_tradeoff(iou: f64, aspect: f64) -> f64 {
    let denom = (1.0 - iou) + aspect;
    if denom <= 0.0 {
        0.0
    } else {
        aspect / denom
    }
}

/// CIoU loss of a single box pair.
pub fn ciou_loss(pred: &BBox, gt: &BBox) -> Result<f64> {
    pred.validate()?;
    gt.validate()?;
    Ok(CiouTerms::compute(pred, gt).loss())
}

/// Mean CIoU loss over rows, differentiable in the predicted corners.
///
/// The aspect trade-off coefficient is a constant during backward. It is
/// computed from the current boxes unless `frozen_tradeoff` supplies it.
/// Returns the loss node and the coefficients used.
pub fn ciou_loss_graph(
    g: &mut Graph,
    pred: &BoxColumns,
    gt: &[BBox],
    frozen_tradeoff: Option<&[f64]>,
) -> Result<(Var, Vec<f64>)> {
    let n = pred.rows(g);
    if n != gt.len() {
        return Err(Error::Shape {
            op: "ciou_loss_graph",
            left: vec![n],
            right: vec![gt.len()],
        });
    }
    let pred_boxes = pred.boxes(g);
    for b in pred_boxes.iter().chain(gt) {
        b.validate()?;
    }
    let tradeoff: Vec<f64> = match frozen_tradeoff {
        Some(t) if t.len() == n => t.to_vec(),
        Some(t) => {
            return Err(Error::Shape {
                op: "ciou_loss_graph",
                left: vec![n],
                right: vec![t.len()],
            })
        }
        None => pred_boxes
            .iter()
            .zip(gt)
            .map(|(p, t)| CiouTerms::compute(p, t).tradeoff)
            .collect(),
    };

    let col = |f: fn(&BBox) -> f64| Tensor::matrix(n, 1, gt.iter().map(f).collect());
    let gx1 = g.constant(col(|b| b.x1)?);
    let gy1 = g.constant(col(|b| b.y1)?);
    let gx2 = g.constant(col(|b| b.x2)?);
    let gy2 = g.constant(col(|b| b.y2)?);

    // intersection over union
    let ix2 = g.minimum(pred.x2, gx2)?;
    let ix1 = g.maximum(pred.x1, gx1)?;
    let iw = g.sub(ix2, ix1)?;
    let iw = g.relu(iw);
    let iy2 = g.minimum(pred.y2, gy2)?;
    let iy1 = g.maximum(pred.y1, gy1)?;
    let ih = g.sub(iy2, iy1)?;
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih)?;
    let pw = g.sub(pred.x2, pred.x1)?;
    let ph = g.sub(pred.y2, pred.y1)?;
    let parea = g.mul(pw, ph)?;
    let garea = g.constant(col(|b| b.width() * b.height())?);
    let union = g.add(parea, garea)?;
    let union = g.sub(union, inter)?;
    let iou = g.div(inter, union)?;

    // normalized centre distance
    let psx = g.add(pred.x1, pred.x2)?;
    let gsx = g.add(gx1, gx2)?;
    let dx = g.sub(psx, gsx)?;
    let psy = g.add(pred.y1, pred.y2)?;
    let gsy = g.add(gy1, gy2)?;
    let dy = g.sub(psy, gsy)?;
    let dx2 = g.mul(dx, dx)?;
    let dy2 = g.mul(dy, dy)?;
    let rho2 = g.add(dx2, dy2)?;
    let rho2 = g.scale(rho2, 0.25);
    let ex2 = g.maximum(pred.x2, gx2)?;
    let ex1 = g.minimum(pred.x1, gx1)?;
    let cw = g.sub(ex2, ex1)?;
    let ey2 = g.maximum(pred.y2, gy2)?;
    let ey1 = g.minimum(pred.y1, gy1)?;
    let ch = g.sub(ey2, ey1)?;
    let cw2 = g.mul(cw, cw)?;
    let ch2 = g.mul(ch, ch)?;
    let c2 = g.add(cw2, ch2)?;
    let center = g.div(rho2, c2)?;

    // aspect-ratio consistency
    let ratio = g.div(pw, ph)?;
    let pred_angle = g.atan(ratio);
    let gt_angle = g.constant(col(|b| (b.width() / b.height()).atan())?);
    let diff = g.sub(gt_angle, pred_angle)?;
    let diff2 = g.mul(diff, diff)?;
    let aspect = g.scale(diff2, 4.0 / (PI * PI));
    let weighted_aspect = g.mul_const(aspect, Tensor::matrix(n, 1, tradeoff.clone())?)?;

    let neg_iou = g.neg(iou);
    let one_minus = g.add_scalar(neg_iou, 1.0);
    let per_box = g.add(one_minus, center)?;
    let per_box = g.add(per_box, weighted_aspect)?;
    Ok((g.mean(per_box), tradeoff))
}

/// Scalar values of every loss part and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub conf: f64,
    pub reg: f64,
    pub con: f64,
    pub dom: f64,
    pub total: f64,
}

/// Unweighted loss parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub cls: f64,
    pub conf: f64,
    pub reg: f64,
    pub con: f64,
    pub dom: f64,
}

/// `cls + conf + reg + lambda * con + alpha * dom`.
pub fn total_loss(parts: LossParts, lambda_con: f64, alpha_dom: f64) -> Result<LossBreakdown> {
    for (component, value) in [
        ("cls", parts.cls),
        ("conf", parts.conf),
        ("reg", parts.reg),
        ("con", parts.con),
        ("dom", parts.dom),
    ] {
        if !value.is_finite() {
            return Err(Error::NonFinite { component, value });
        }
    }
    Ok(LossBreakdown {
        cls: parts.cls,
        conf: parts.conf,
        reg: parts.reg,
        con: parts.con,
        dom: parts.dom,
        total: parts.cls + parts.conf + parts.reg + lambda_con * parts.con + alpha_dom * parts.dom,
    })
}

/// Loss-part nodes of one graph.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub cls: Var,
    pub conf: Var,
    pub reg: Var,
    pub con: Var,
    pub dom: Var,
}

/// Builds the weighted total node and the matching breakdown.
pub fn total_loss_graph(
    g: &mut Graph,
    parts: LossNodes,
    lambda_con: f64,
    alpha_dom: f64,
) -> Result<(Var, LossBreakdown)> {
    let values = LossParts {
        cls: g.value(parts.cls).item(),
        conf: g.value(parts.conf).item(),
        reg: g.value(parts.reg).item(),
        con: g.value(parts.con).item(),
        dom: g.value(parts.dom).item(),
    };
    let breakdown = total_loss(values, lambda_con, alpha_dom)?;
    let s = g.add(parts.cls, parts.conf)?;
    let s = g.add(s, parts.reg)?;
    let con = g.scale(parts.con, lambda_con);
    let s = g.add(s, con)?;
    let dom = g.scale(parts.dom, alpha_dom);
    let total = g.add(s, dom)?;
    Ok((total, breakdown))
}
