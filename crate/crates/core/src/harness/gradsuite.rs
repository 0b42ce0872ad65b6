//! Finite-difference suite over every differentiable operation, each loss
//! module and the composed training loss.
//!
//! Every case builds a scalar from its inputs (non-scalar outputs are
//! contracted with a fixed random weight tensor) and compares the reverse
//! mode gradient with central differences. Inputs are drawn away from the
//! kinks of relu, max and min so the comparison is well posed.

use serde::Serialize;

use crate::adversarial::domain_loss;
use crate::autograd::{check_gradients, Graph, Tensor, Var};
use crate::contrastive::{batch_normalize, k_instance_sample, k_instance_loss, Normalizer, DEFAULT_EPSILON};
use crate::detection::{binary_cross_entropy, ciou_loss_graph, cross_entropy, BBox, BoxColumns};
use crate::error::Result;
use crate::exec::{self, Mode};
use crate::gate::gate_and_separate;
use crate::harness::config::TrainConfig;
use crate::harness::model::{bind_vars, composed_loss, LossContext, Model};
use crate::harness::synthetic::generate_synthetic_batch;
use crate::nn::{Mlp, Parameters};
use crate::random::{derive_seed, randn, rng, uniform, SeededRng};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-5;
/// Smallest relu input magnitude accepted by the composed check.
const RELU_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct CaseOutcome {
    pub name: &'static str,
    pub seeds: usize,
    pub max_error: f64,
    pub passed: bool,
}

type Case = (&'static str, fn(u64) -> Result<f64>);

fn away_from_zero(r: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = uniform(r, lo, hi);
            if uniform(r, 0.0, 1.0) < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}

fn positive(r: &mut SeededRng, shape: &[usize]) -> Tensor {
    away_from_zero(r, shape, 0.5, 2.0).map(f64::abs)
}

/// Contracts `y` with fixed weights so every output element matters.
fn contract_out(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = randn(&mut rng(derive_seed(seed, 77)), g.shape(y), 1.0);
    let p = g.mul_const(y, w)?;
    Ok(g.sum(p))
}

fn check(inputs: &[Tensor], seed: u64, build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> Result<f64> {
    let report = check_gradients(
        |g, v| {
            let y = build(g, v)?;
            if g.value(y).numel() == 1 {
                Ok(y)
            } else {
                contract_out(g, y, seed)
            }
        },
        inputs,
        STEP,
    )?;
    Ok(report.max_error())
}

fn unary(seed: u64, positive_only: bool, f: fn(&mut Graph, Var) -> Var) -> Result<f64> {
    let mut r = rng(seed);
    let x = if positive_only {
        positive(&mut r, &[3, 4])
    } else {
        away_from_zero(&mut r, &[3, 4], 0.1, 2.0)
    };
    check(&[x], seed, |g, v| Ok(f(g, v[0])))
}

fn binary(seed: u64, f: fn(&mut Graph, Var, Var) -> Result<Var>) -> Result<f64> {
    let mut r = rng(seed);
    let a = away_from_zero(&mut r, &[3, 4], 0.5, 2.0);
    // keep b away from a so max/min never tie, and away from zero for div
    let b = a.map(|v| if v > 0.0 { -v * 0.7 } else { v.abs() * 1.3 });
    check(&[a, b], seed, |g, v| f(g, v[0], v[1]))
}

/// Matching corners at least 0.01 apart, so no max or min ties within a step.
fn separated_edges(a: &BBox, b: &BBox) -> bool {
    [a.x1 - b.x1, a.y1 - b.y1, a.x2 - b.x2, a.y2 - b.y2].iter().all(|d| d.abs() > 0.01)
}

fn mlp_value(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let m = Mlp::init(&mut r, 5, 6, 3);
    let x = randn(&mut r, &[4, 5], 1.0);
    let mut inputs = vec![x];
    inputs.extend(m.parameters().into_iter().cloned());
    check(&inputs, seed, |g, v| {
        let h = g.matmul(v[0], v[1])?;
        let h = g.add_row(h, v[2])?;
        let h = g.relu(h);
        let o = g.matmul(h, v[3])?;
        g.add_row(o, v[4])
    })
}

fn cases() -> Vec<Case> {
    vec![
        ("add", |s| binary(s, Graph::add)),
        ("sub", |s| binary(s, Graph::sub)),
        ("mul", |s| binary(s, Graph::mul)),
        ("div", |s| binary(s, Graph::div)),
        ("maximum", |s| binary(s, Graph::maximum)),
        ("minimum", |s| binary(s, Graph::minimum)),
        ("neg", |s| unary(s, false, Graph::neg)),
        ("scale", |s| unary(s, false, |g, x| g.scale(x, -1.7))),
        ("add_scalar", |s| unary(s, false, |g, x| g.add_scalar(x, 0.3))),
        ("relu", |s| unary(s, false, Graph::relu)),
        ("sigmoid", |s| unary(s, false, Graph::sigmoid)),
        ("exp", |s| unary(s, false, Graph::exp)),
        ("log", |s| unary(s, true, Graph::log)),
        ("sqrt", |s| unary(s, true, Graph::sqrt)),
        ("powf", |s| unary(s, true, |g, x| g.powf(x, 1.5))),
        ("atan", |s| unary(s, false, Graph::atan)),
        ("softplus", |s| unary(s, false, Graph::softplus)),
        ("sum", |s| unary(s, false, Graph::sum)),
        ("mean", |s| unary(s, false, Graph::mean)),
        ("mul_const", |s| {
            let c = randn(&mut rng(s ^ 1), &[3, 4], 1.0);
            let x = randn(&mut rng(s), &[3, 4], 1.0);
            check(&[x], s, |g, v| g.mul_const(v[0], c.clone()))
        }),
        ("add_row", |s| {
            let mut r = rng(s);
            let x = randn(&mut r, &[3, 4], 1.0);
            let b = randn(&mut r, &[4], 1.0);
            check(&[x, b], s, |g, v| g.add_row(v[0], v[1]))
        }),
        ("mul_row", |s| {
            let mut r = rng(s);
            let x = randn(&mut r, &[3, 4], 1.0);
            let b = randn(&mut r, &[4], 1.0);
            check(&[x, b], s, |g, v| g.mul_row(v[0], v[1]))
        }),
        ("matmul", |s| {
            let mut r = rng(s);
            let a = randn(&mut r, &[3, 4], 1.0);
            let b = randn(&mut r, &[4, 2], 1.0);
            check(&[a, b], s, |g, v| g.matmul(v[0], v[1]))
        }),
        ("transpose", |s| {
            let x = randn(&mut rng(s), &[3, 4], 1.0);
            check(&[x], s, |g, v| g.transpose(v[0]))
        }),
        ("sum_rows", |s| {
            let x = randn(&mut rng(s), &[3, 4], 1.0);
            check(&[x], s, |g, v| g.sum_rows(v[0]))
        }),
        ("mean_axis0", |s| {
            let x = randn(&mut rng(s), &[3, 4], 1.0);
            check(&[x], s, |g, v| g.mean_axis0(v[0]))
        }),
        ("log_softmax", |s| {
            let x = randn(&mut rng(s), &[3, 4], 1.5);
            check(&[x], s, |g, v| g.log_softmax(v[0]))
        }),
        ("masked_log_sum_exp", |s| {
            let x = randn(&mut rng(s), &[4, 4], 1.5);
            let mask: Vec<bool> = (0..16).map(|i| i / 4 != 2 && !(i * 7 + s as usize).is_multiple_of(3)).collect();
            check(&[x], s, move |g, v| g.masked_log_sum_exp(v[0], mask.clone()))
        }),
        ("select_rows", |s| {
            let x = randn(&mut rng(s), &[4, 3], 1.0);
            check(&[x], s, |g, v| g.select_rows(v[0], vec![2, 0, 2]))
        }),
        ("select_cols", |s| {
            let x = randn(&mut rng(s), &[4, 3], 1.0);
            check(&[x], s, |g, v| g.select_cols(v[0], vec![1, 1, 0]))
        }),
        ("mlp", mlp_value),
        ("gate_separation", |s| {
            let mut r = rng(s);
            let m = Mlp::init(&mut r, 4, 4, 4);
            let x = randn(&mut r, &[5, 4], 1.0);
            let mut inputs = vec![x];
            inputs.extend(m.parameters().into_iter().cloned());
            check(&inputs, s, |g, v| {
                let head = crate::nn::BoundMlp {
                    hidden: crate::nn::BoundLinear { weight: v[1], bias: v[2] },
                    output: crate::nn::BoundLinear { weight: v[3], bias: v[4] },
                };
                let sep = gate_and_separate(g, v[0], &head)?;
                let a = contract_out(g, sep.object, s)?;
                let b = contract_out(g, sep.domain, s ^ 5)?;
                g.add(a, b)
            })
        }),
        ("domain_loss", |s| {
            let x = randn(&mut rng(s), &[6, 3], 1.5);
            let labels = [0, 2, 1, 1, 0, 2];
            check(&[x], s, |g, v| domain_loss(g, v[0], &labels, crate::adversarial::Reduction::Mean))
        }),
        ("batch_normalize", |s| {
            let x = randn(&mut rng(s), &[6, 3], 1.0);
            check(&[x], s, |g, v| batch_normalize(g, v[0], DEFAULT_EPSILON))
        }),
        ("k_instance_loss", |s| {
            let x = randn(&mut rng(s), &[10, 4], 0.5);
            let labels = [0, 1, 0, 1, 2, 0, 2, 1, 0, 0];
            let sample = k_instance_sample(&labels, 3, s)?;
            check(&[x], s, move |g, v| {
                let n = batch_normalize(g, v[0], DEFAULT_EPSILON)?;
                k_instance_loss(g, n, &sample, 3, Normalizer::Fixed)
            })
        }),
        ("cross_entropy", |s| {
            let x = randn(&mut rng(s), &[5, 3], 1.5);
            check(&[x], s, |g, v| cross_entropy(g, v[0], &[0, 1, 2, 2, 1]))
        }),
        ("binary_cross_entropy", |s| {
            let x = randn(&mut rng(s), &[5, 1], 2.0);
            check(&[x], s, |g, v| binary_cross_entropy(g, v[0], &[1.0, 0.0, 1.0, 1.0, 0.0]))
        }),
        ("ciou", |s| {
            let mut r = rng(s);
            let mut corners = Vec::new();
            let mut gts = Vec::new();
            while gts.len() < 4 {
                let (cx, cy) = (uniform(&mut r, 0.3, 0.7), uniform(&mut r, 0.3, 0.7));
                let (w, h) = (uniform(&mut r, 0.2, 0.4), uniform(&mut r, 0.2, 0.4));
                let pred = BBox::from_center(cx, cy, w, h)?;
                let (dx, dy) = (uniform(&mut r, -0.1, 0.1), uniform(&mut r, -0.1, 0.1));
                let (gw, gh) = (uniform(&mut r, 0.15, 0.45), uniform(&mut r, 0.15, 0.45));
                let gt = BBox::from_center(cx + dx, cy + dy, gw, gh)?;
                if separated_edges(&pred, &gt) {
                    corners.push(vec![pred.x1, pred.y1, pred.x2, pred.y2]);
                    gts.push(gt);
                }
            }
            let x = Tensor::from_rows(&corners)?;
            let tradeoff = {
                let mut g = Graph::new();
                let c = g.constant(x.clone());
                let cols = BoxColumns::from_corners(&mut g, c)?;
                ciou_loss_graph(&mut g, &cols, &gts, None)?.1
            };
            check(&[x], s, move |g, v| {
                let cols = BoxColumns::from_corners(g, v[0])?;
                Ok(ciou_loss_graph(g, &cols, &gts, Some(&tradeoff))?.0)
            })
        }),
        ("composed_total_loss", composed),
    ]
}

/// Small configuration for the composed check.
pub fn composed_config(seed: u64) -> TrainConfig {
    TrainConfig {
        dims: vec![3, 4],
        num_classes: 2,
        class_weights: vec![0.6, 0.4],
        num_domains_planted: 2,
        clusters: 2,
        instances: 3,
        batch_size: 10,
        eval_size: 10,
        background_fraction: 0.2,
        seed,
        ..TrainConfig::default()
    }
}

/// Total loss over two scales as a function of every parameter and every
/// candidate feature. Pseudo labels, the contrastive sample and the CIoU
/// trade-off are frozen from a first pass; the discriminator is applied
/// without the reversal node so the analytic gradient is the gradient of
/// the forward value.
fn composed(seed: u64) -> Result<f64> {
    let config = composed_config(seed);
    let model = Model::init(&mut rng(derive_seed(seed, 1)), &config);
    let mut inputs: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
    let n_params = inputs.len();
    // Redraw the data until the check is away from every kink: the box head
    // starts at zero so decoded boxes are the anchors, which must not share
    // an edge with their targets, and no relu input may sit near zero.
    let mut attempt = 0;
    let (batches, frozen) = loop {
        let batches = (0..config.dims.len())
            .map(|s| generate_synthetic_batch(&config, s, derive_seed(seed, 2 + 100 * attempt)))
            .collect::<Result<Vec<_>>>()?;
        attempt += 1;
        let clear_boxes = batches.iter().all(|b| {
            b.object_rows()
                .into_iter()
                .all(|i| separated_edges(&b.pred_boxes[i], &b.gt_boxes[i]))
        });
        if !clear_boxes {
            continue;
        }
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let xs: Vec<Var> = batches.iter().map(|b| g.constant(b.features.clone())).collect();
        let ctx: Vec<LossContext> = (0..batches.len())
            .map(|s| LossContext::fresh(derive_seed(seed, 3 + s as u64)))
            .collect();
        let (_, _, outs) = composed_loss(&mut g, &config, &bound, &xs, &batches, &ctx)?;
        let mut margin = f64::INFINITY;
        for ((b, &x), out) in bound.iter().zip(&xs).zip(&outs) {
            for (input, layer) in [(x, b.gate.hidden), (out.separated.object, b.discriminator.hidden)] {
                let pre = layer.forward(&mut g, input)?;
                margin = g.value(pre).data().iter().fold(margin, |m, v| m.min(v.abs()));
            }
        }
        if margin > RELU_MARGIN {
            break (batches, outs.iter().map(|o| o.frozen(false)).collect::<Vec<_>>());
        }
    };
    inputs.extend(batches.iter().map(|b| b.features.clone()));

    check(&inputs, seed, move |g, v| {
        let bound = bind_vars(&v[..n_params]);
        Ok(composed_loss(g, &config, &bound, &v[n_params..], &batches, &frozen)?.0)
    })
}

/// Runs every case over seeds `0..seeds`.
pub fn run_suite(seeds: usize) -> Result<Vec<CaseOutcome>> {
    let cases = cases();
    exec::map(Mode::default(), &cases, |(name, run)| {
        let mut max_error: f64 = 0.0;
        for seed in 0..seeds as u64 {
            max_error = max_error.max(run(seed)?);
        }
        Ok(CaseOutcome {
            name,
            seeds,
            max_error,
            passed: max_error <= TOLERANCE,
        })
    })
    .into_iter()
    .collect()
}

/// Names of every case, in run order.
pub fn case_names() -> Vec<&'static str> {
    cases().into_iter().map(|c| c.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_on_a_few_seeds() {
        for outcome in run_suite(3).unwrap() {
            assert!(outcome.passed, "{outcome:?}");
        }
    }

    #[test]
    fn case_names_are_unique() {
        let names = case_names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.contains(&"composed_total_loss"));
    }

    #[test]
    fn separated_edges_rejects_near_ties() {
        let a = BBox::new(0.1, 0.1, 0.5, 0.5).unwrap();
        let b = BBox::new(0.105, 0.2, 0.6, 0.6).unwrap();
        let c = BBox::new(0.2, 0.2, 0.6, 0.6).unwrap();
        assert!(!separated_edges(&a, &b));
        assert!(separated_edges(&a, &c));
    }
}
