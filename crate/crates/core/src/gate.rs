//! Gated split of candidate features into an object branch and a domain
//! branch.
//!
//! A filter network `f` produces one logit per feature element. With
//! `g = sigmoid(f(x))` the object features are `x * g` and the domain
//! features are `x * (1 - g)`, both elementwise, so the two branches always
//! add back up to the candidate feature.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{BoundMlp, Mlp, Parameters};
use crate::random::SeededRng;

/// Filter network: `C -> H -> C` with a relu hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateHead {
    pub net: Mlp,
}

impl GateHead {
    pub fn init(rng: &mut SeededRng, channels: usize, hidden: usize) -> Self {
        Self {
            net: Mlp::init(rng, channels, hidden, channels),
        }
    }

    /// All-zero parameters; every gate value is exactly 0.5.
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        Self {
            net: Mlp::zeros(channels, hidden, channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.net.input_dim()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        self.net.bind(g)
    }
}

impl Parameters for GateHead {
    fn parameters(&self) -> Vec<&Tensor> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.parameters_mut()
    }
}

/// Object, domain and gate nodes of one separation.
#[derive(Debug, Clone, Copy)]
pub struct SeparatedFeatures {
    pub object: Var,
    pub domain: Var,
    pub gate: Var,
}

/// `sigmoid(f(x))` for every element of `features: [N, C]`.
pub fn gate_forward(g: &mut Graph, features: Var, head: &BoundMlp) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    let expected = g.shape(head.hidden.weight)[0];
    if shape.len() != 2 || shape[1] != expected {
        return Err(Error::Shape {
            op: "gate_forward",
            left: shape,
            right: vec![expected],
        });
    }
    let logits = head.forward(g, features)?;
    Ok(g.sigmoid(logits))
}

/// Splits `features` with an already computed gate of the same shape.
pub fn separate(g: &mut Graph, features: Var, gate: Var) -> Result<SeparatedFeatures> {
    let object = g.mul(features, gate)?;
    let neg = g.neg(gate);
    let complement = g.add_scalar(neg, 1.0);
    let domain = g.mul(features, complement)?;
    Ok(SeparatedFeatures {
        object,
        domain,
        gate,
    })
}

/// Gate plus split in one call.
pub fn gate_and_separate(g: &mut Graph, features: Var, head: &BoundMlp) -> Result<SeparatedFeatures> {
    let gate = gate_forward(g, features, head)?;
    separate(g, features, gate)
}
