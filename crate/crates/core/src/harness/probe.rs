//! Linear softmax probe: how much label information a frozen
//! representation exposes to a small, regularized linear classifier.
//!
//! Features are used as they are (no standardization), so a representation
//! that shrinks a signal toward zero is credited with suppressing it. Every
//! probe gets the same fixed optimization budget.

use rand::seq::SliceRandom;

use crate::autograd::Tensor;
use crate::error::{contract, Error, Result};
use crate::random::rng;

pub const PROBE_STEPS: usize = 300;
pub const PROBE_LEARNING_RATE: f64 = 0.1;
pub const PROBE_L2: f64 = 1e-3;

/// Multinomial logistic regression fitted by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `[C, classes]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub channels: usize,
    pub classes: usize,
}

impl LinearProbe {
    pub fn fit(features: &Tensor, rows: &[usize], labels: &[usize], classes: usize) -> Self {
        let c = features.cols();
        let mut weight = vec![0.0; c * classes];
        let mut bias = vec![0.0; classes];
        let n = rows.len() as f64;
        let mut probs = vec![0.0; classes];
        for _ in 0..PROBE_STEPS {
            let mut gw = vec![0.0; c * classes];
            let mut gb = vec![0.0; classes];
            for &i in rows {
                let x = features.row(i);
                softmax_into(x, &weight, &bias, &mut probs);
                probs[labels[i]] -= 1.0;
                for (j, &xj) in x.iter().enumerate() {
                    for (k, p) in probs.iter().enumerate() {
                        gw[j * classes + k] += xj * p;
                    }
                }
                gb.iter_mut().zip(&probs).for_each(|(g, p)| *g += p);
            }
            for (w, g) in weight.iter_mut().zip(&gw) {
                *w -= PROBE_LEARNING_RATE * (g / n + PROBE_L2 * *w);
            }
            for (b, g) in bias.iter_mut().zip(&gb) {
                *b -= PROBE_LEARNING_RATE * g / n;
            }
        }
        Self {
            weight,
            bias,
            channels: c,
            classes,
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        for k in 0..self.classes {
            let z = logit(x, &self.weight, &self.bias, self.classes, k);
            if z > best.0 {
                best = (z, k);
            }
        }
        best.1
    }
}

fn logit(x: &[f64], weight: &[f64], bias: &[f64], classes: usize, k: usize) -> f64 {
    bias[k] + x.iter().enumerate().map(|(j, xj)| xj * weight[j * classes + k]).sum::<f64>()
}

fn softmax_into(x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let classes = out.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = logit(x, weight, bias, classes, k);
    }
    let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for o in out.iter_mut() {
        *o = (*o - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Held-out accuracy of a fresh probe; the rows are split in half at random.
pub fn probe_accuracy(features: &Tensor, labels: &[usize], seed: u64) -> Result<f64> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::Shape {
            op: "probe_accuracy",
            left: vec![n],
            right: vec![labels.len()],
        });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let first = labels.first().copied();
    if n < 2 || labels.iter().all(|&l| Some(l) == first) {
        return contract("probe needs at least two distinct labels");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed));
    let (train, test) = order.split_at(n / 2);
    let probe = LinearProbe::fit(features, train, labels, classes);
    let correct = test
        .iter()
        .filter(|&&i| probe.predict(features.row(i)) == labels[i])
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// [`probe_accuracy`] against planted domain labels.
pub fn probe_domain_accuracy(features: &Tensor, domain_labels: &[usize], seed: u64) -> Result<f64> {
    probe_accuracy(features, domain_labels, seed)
}
