use ldbfss_core::adversarial::{discriminator_forward, domain_loss, DomainDiscriminator, Reduction};
use ldbfss_core::autograd::{Graph, Tensor};
use ldbfss_core::cluster::{assign_pseudo_domains, best_match_agreement, Linkage};
use ldbfss_core::gate::{gate_and_separate, GateHead};
use ldbfss_core::harness::{generate_synthetic_batch, probe_domain_accuracy, silhouette, TrainConfig};
use ldbfss_core::nn::{Parameters, Sgd};
use ldbfss_core::random::{randn, rng};
use proptest::prelude::*;
use rand::Rng;

mod support;
use support::naive_silhouette;

#[test]
fn separation_identity_over_random_batches() {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut r = rng(seed);
        let n = r.random_range(1..=64);
        let c = r.random_range(1..=16);
        let head = GateHead::init(&mut r, c, c);
        let x = randn(&mut r, &[n, c], 3.0);
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let bound = head.bind(&mut g);
        let sep = gate_and_separate(&mut g, v, &bound).unwrap();
        let (o, d) = (g.value(sep.object), g.value(sep.domain));
        for i in 0..x.numel() {
            worst = worst.max((o.data()[i] + d.data()[i] - x.data()[i]).abs());
        }
    }
    assert!(worst <= 1e-6, "{worst}");
}

/// Gradient of the domain loss with respect to object features, with or
/// without the reversal node.
fn object_gradient(x: &Tensor, disc: &DomainDiscriminator, labels: &[usize], coeff: Option<f64>) -> Tensor {
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let bound = disc.net.bind(&mut g);
    let logits = match coeff {
        Some(c) => discriminator_forward(&mut g, v, &bound, c).unwrap(),
        None => bound.forward(&mut g, v).unwrap(),
    };
    let loss = domain_loss(&mut g, logits, labels, Reduction::Mean).unwrap();
    g.backward(loss).unwrap().get(v).unwrap().clone()
}

#[test]
fn reversal_negates_and_scales_gradient() {
    for seed in 0..30u64 {
        let mut r = rng(seed);
        let (n, c, k) = (r.random_range(2..20), r.random_range(1..12), r.random_range(2..6));
        let disc = DomainDiscriminator::init(&mut r, c, c, k);
        let x = randn(&mut r, &[n, c], 1.0);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let coeff = [0.1, 0.5, 1.0, 2.5][seed as usize % 4];
        let plain = object_gradient(&x, &disc, &labels, None);
        let reversed = object_gradient(&x, &disc, &labels, Some(coeff));
        for (a, b) in reversed.data().iter().zip(plain.data()) {
            assert!((a + coeff * b).abs() <= 1e-12);
        }
    }
}

#[test]
fn one_step_realizes_min_max() {
    let lr = 1e-2;
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let (n, c, k) = (24, 6, 3);
        let head = GateHead::init(&mut r, c, c);
        let disc = DomainDiscriminator::init(&mut r, c, c, k);
        let x = randn(&mut r, &[n, c], 1.0);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();

        let loss_of = |head: &GateHead, disc: &DomainDiscriminator, reverse: bool| {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let gb = head.bind(&mut g);
            let db = disc.net.bind(&mut g);
            let sep = gate_and_separate(&mut g, v, &gb).unwrap();
            let logits = if reverse {
                discriminator_forward(&mut g, sep.object, &db, 1.0).unwrap()
            } else {
                db.forward(&mut g, sep.object).unwrap()
            };
            let loss = domain_loss(&mut g, logits, &labels, Reduction::Mean).unwrap();
            let grads = g.backward(loss).unwrap();
            let get = |vars: Vec<_>| vars.into_iter().map(|v| grads.get(v).unwrap().clone()).collect::<Vec<_>>();
            (g.value(loss).item(), get(gb.vars()), get(db.vars()))
        };

        // combined step through the reversal node
        let (mut h1, mut d1) = (head.clone(), disc.clone());
        {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let gb = h1.bind(&mut g);
            let db = d1.net.bind(&mut g);
            let sep = gate_and_separate(&mut g, v, &gb).unwrap();
            let logits = discriminator_forward(&mut g, sep.object, &db, 1.0).unwrap();
            let loss = domain_loss(&mut g, logits, &labels, Reduction::Mean).unwrap();
            let grads = g.backward(loss).unwrap();
            let mut vars = gb.vars();
            vars.extend(db.vars());
            let mut params = h1.parameters_mut();
            params.extend(d1.parameters_mut());
            Sgd::new(lr, 0.0, 0.0).step(params, &vars, &grads).unwrap();
        }

        // separate optimizations on a frozen copy: D descends, E ascends
        let (l0, gate_grads, disc_grads) = loss_of(&head, &disc, false);
        let expect = |params: Vec<&Tensor>, grads: &[Tensor], sign: f64| -> Vec<Tensor> {
            params
                .iter()
                .zip(grads)
                .map(|(p, g)| Tensor::new(p.shape().to_vec(), p.data().iter().zip(g.data()).map(|(a, b)| a + sign * lr * b).collect()).unwrap())
                .collect()
        };
        let gate_expect = expect(head.parameters(), &gate_grads, 1.0);
        let disc_expect = expect(disc.parameters(), &disc_grads, -1.0);
        for (got, want) in h1.parameters().into_iter().zip(&gate_expect).chain(d1.parameters().into_iter().zip(&disc_expect)) {
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-12, "seed {seed}");
            }
        }

        // D alone lowers the loss, E alone raises it
        let (ld, _, _) = loss_of(&head, &d1, false);
        let (le, _, _) = loss_of(&h1, &disc, false);
        assert!(ld < l0 && le > l0, "seed {seed}: {l0} {ld} {le}");
        let (lr_loss, _, _) = loss_of(&head, &disc, true);
        assert_eq!(lr_loss, l0);
    }
}

#[test]
fn silhouette_matches_double_loop() {
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let n = r.random_range(3..=64);
        let k = r.random_range(2..=5.min(n));
        let mut labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let x = randn(&mut r, &[n, 3], 1.0);
        let got = silhouette(&x, &labels).unwrap();
        assert!((got - naive_silhouette(&x, &labels)).abs() <= 1e-9, "seed {seed}");
    }
}

#[test]
fn generator_plants_domain_signal() {
    let config = TrainConfig::default();
    let chance = config.domain_chance();
    for scale in 0..config.dims.len() {
        let b = generate_synthetic_batch(&config, scale, 11).unwrap();
        let truth = b.true_domain.as_ref().unwrap();
        let acc = probe_domain_accuracy(&b.features, truth, 5).unwrap();
        assert!(acc >= chance + 0.25, "scale {scale}: {acc}");
    }
}

#[test]
fn clustering_recovers_planted_domains() {
    // without class structure the planted offsets dominate
    let config = TrainConfig {
        class_scale: 0.0,
        ..TrainConfig::default()
    };
    for seed in 0..5 {
        let b = generate_synthetic_batch(&config, 0, seed).unwrap();
        let labels = assign_pseudo_domains(&b.features, 4, Linkage::Average).unwrap();
        let agreement = best_match_agreement(&labels.labels, b.true_domain.as_ref().unwrap()).unwrap();
        assert!(agreement >= 0.9, "seed {seed}: {agreement}");
    }
}

proptest! {
    #[test]
    fn gate_shares_stay_between_zero_and_one(seed in any::<u64>(), n in 1usize..10, c in 1usize..8) {
        let mut r = rng(seed);
        let head = GateHead::init(&mut r, c, c);
        let x = randn(&mut r, &[n, c], 2.0);
        let mut g = Graph::new();
        let v = g.constant(x);
        let bound = head.bind(&mut g);
        let sep = gate_and_separate(&mut g, v, &bound).unwrap();
        prop_assert!(g.value(sep.gate).data().iter().all(|&s| s > 0.0 && s < 1.0));
    }
}
