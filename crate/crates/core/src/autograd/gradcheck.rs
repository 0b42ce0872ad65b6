//! Central finite differences and an analytic-vs-numeric gradient checker.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{contract, Result};

/// Central-difference gradient of a scalar function of one tensor.
pub fn finite_difference_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.numel()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    Tensor::from_parts(x.shape().to_vec(), grad)
}

/// Error between an analytic and a numeric derivative, relative to the
/// larger magnitude once that magnitude exceeds one and absolute below it.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error per input, in input order.
    pub per_input: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_error() <= tol
    }
}

/// Compares backward against central differences for every input tensor.
///
/// `build` receives a fresh graph and one trainable leaf per input and
/// must return a scalar output.
pub fn check_gradients<F>(build: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        if g.value(out).numel() != 1 {
            return contract("gradient check needs a scalar output");
        }
        Ok((g, vars, out))
    };

    let (graph, vars, out) = eval(inputs)?;
    let grads = graph.backward(out)?;

    let mut per_input = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("trainable leaf has a gradient");
        let numeric = finite_difference_grad(
            |probe| {
                let mut values = inputs.to_vec();
                values[k] = probe.clone();
                let (g, _, o) = eval(&values).expect("graph rebuild succeeds");
                g.value(o).item()
            },
            input,
            h,
        );
        let worst = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max);
        per_input.push(worst);
    }
    Ok(GradCheckReport { per_input })
}
