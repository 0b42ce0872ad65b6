//! Dense layers and the momentum SGD optimizer.

use serde::{Deserialize, Serialize};

use crate::autograd::{GradientMap, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::random::{randn, SeededRng};

/// Tensors owned by a trainable component, in a fixed order.
pub trait Parameters {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Gaussian init with standard deviation `1/sqrt(in)`, zero bias.
    pub fn init(rng: &mut SeededRng, input: usize, output: usize) -> Self {
        Self {
            weight: randn(rng, &[input, output], 1.0 / (input as f64).sqrt()),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundLinear {
        BoundLinear {
            weight: g.param(self.weight.clone()),
            bias: g.param(self.bias.clone()),
        }
    }
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.matmul(x, self.weight)?;
        g.add_row(h, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

impl Parameters for Linear {
    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Two dense layers with a relu in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundMlp {
    pub hidden: BoundLinear,
    pub output: BoundLinear,
}

impl Mlp {
    pub fn init(rng: &mut SeededRng, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Linear::init(rng, input, hidden),
            output: Linear::init(rng, hidden, output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Linear::zeros(input, hidden),
            output: Linear::zeros(hidden, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            hidden: self.hidden.bind(g),
            output: self.output.bind(g),
        }
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        let h = g.relu(h);
        self.output.forward(g, h)
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.hidden.vars().to_vec();
        v.extend(self.output.vars());
        v
    }
}

impl Parameters for Mlp {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.hidden.parameters();
        p.extend(self.output.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.hidden.parameters_mut();
        p.extend(self.output.parameters_mut());
        p
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// `v <- mu v + (g + wd p)`, `p <- p - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Applies one update. `params[i]` was bound to the graph as `vars[i]`.
    pub fn step(&mut self, params: Vec<&mut Tensor>, vars: &[Var], grads: &GradientMap) -> Result<()> {
        if params.len() != vars.len() {
            return Err(Error::Shape {
                op: "Sgd::step",
                left: vec![params.len()],
                right: vec![vars.len()],
            });
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        for ((p, v), var) in params.into_iter().zip(&mut self.velocity).zip(vars) {
            let zero;
            let g = match grads.get(*var) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(p.shape());
                    &zero
                }
            };
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                let d = gi + self.weight_decay * *pi;
                *vi = self.momentum * *vi + d;
                *pi -= self.learning_rate * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::check_gradients;
    use crate::random::rng;

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut r = rng(seed);
            let mlp = Mlp::init(&mut r, 5, 6, 3);
            let x = randn(&mut r, &[4, 5], 1.0);
            let mut inputs: Vec<Tensor> = mlp.parameters().into_iter().cloned().collect();
            inputs.push(x);
            let report = check_gradients(
                |g, v| {
                    let bound = BoundMlp {
                        hidden: BoundLinear { weight: v[0], bias: v[1] },
                        output: BoundLinear { weight: v[2], bias: v[3] },
                    };
                    let y = bound.forward(g, v[4])?;
                    let y = g.log_softmax(y)?;
                    Ok(g.sum(y))
                },
                &inputs,
                1e-4,
            )
            .unwrap();
            assert!(report.passes(1e-5), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn sgd_momentum_update() {
        let mut p = Tensor::vector(vec![1.0]).unwrap();
        let mut g = Graph::new();
        let v = g.param(p.clone());
        let two = g.scale(v, 2.0);
        let l = g.sum(two);
        let grads = g.backward(l).unwrap();
        let mut opt = Sgd::new(0.1, 0.9, 0.0);
        opt.step(vec![&mut p], &[v], &grads).unwrap();
        assert!((p.item() - 0.8).abs() < 1e-15);
        opt.step(vec![&mut p], &[v], &grads).unwrap();
        // v = 0.9 * 2 + 2 = 3.8
        assert!((p.item() - (0.8 - 0.38)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut p = Tensor::vector(vec![2.0]).unwrap();
        let mut g = Graph::new();
        let v = g.param(p.clone());
        let mut opt = Sgd::new(0.5, 0.0, 0.1);
        opt.step(vec![&mut p], &[v], &GradientMap::default()).unwrap();
        assert!((p.item() - 1.9).abs() < 1e-15);
    }
}
