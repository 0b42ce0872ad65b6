//! Domain discriminator trained on pseudo domain labels behind a gradient
//! reversal node.
//!
//! The discriminator sees the object features through
//! [`Graph::gradient_reverse`]. One optimizer step on the combined loss then
//! moves the discriminator down the domain loss while the gate (and anything
//! upstream of the object features) moves up it.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::nn::{BoundMlp, Mlp, Parameters};
use crate::random::SeededRng;

/// Two-layer network from a `C`-dim object feature to `k` domain logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDiscriminator {
    pub net: Mlp,
}

impl DomainDiscriminator {
    pub fn init(rng: &mut SeededRng, channels: usize, hidden: usize, domains: usize) -> Self {
        Self {
            net: Mlp::init(rng, channels, hidden, domains),
        }
    }

    pub fn zeros(channels: usize, hidden: usize, domains: usize) -> Self {
        Self {
            net: Mlp::zeros(channels, hidden, domains),
        }
    }

    pub fn domains(&self) -> usize {
        self.net.output_dim()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        self.net.bind(g)
    }
}

impl Parameters for DomainDiscriminator {
    fn parameters(&self) -> Vec<&Tensor> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.parameters_mut()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            other => contract(format!("unknown reduction '{other}' (expected sum or mean)")),
        }
    }
}

/// `d(gradient_reverse(object_features, grl_coeff))`.
pub fn discriminator_forward(
    g: &mut Graph,
    object_features: Var,
    disc: &BoundMlp,
    grl_coeff: f64,
) -> Result<Var> {
    let shape = g.shape(object_features).to_vec();
    let expected = g.shape(disc.hidden.weight)[0];
    if shape.len() != 2 || shape[1] != expected {
        return Err(Error::Shape {
            op: "discriminator_forward",
            left: shape,
            right: vec![expected],
        });
    }
    let reversed = g.gradient_reverse(object_features, grl_coeff)?;
    disc.forward(g, reversed)
}

/// Rows of a one-hot matrix for `labels` over `classes` columns.
pub(crate) fn one_hot(labels: &[usize], classes: usize, what: &str) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return contract(format!("{what} label {l} at row {i} is outside [0, {classes})"));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data)
}

/// Cross-entropy of domain logits against pseudo domain labels.
pub fn domain_loss(g: &mut Graph, logits: Var, labels: &[usize], reduction: Reduction) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape {
            op: "domain_loss",
            left: shape,
            right: vec![labels.len()],
        });
    }
    let target = one_hot(labels, shape[1], "domain")?;
    let logp = g.log_softmax(logits)?;
    let picked = g.mul_const(logp, target)?;
    let total = g.sum(picked);
    let scale = match reduction {
        Reduction::Sum => -1.0,
        Reduction::Mean => -1.0 / labels.len() as f64,
    };
    Ok(g.scale(total, scale))
}
