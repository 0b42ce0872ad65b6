//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails. `ACCEPTANCE_CRITERIA=1,3` restricts the
//! run to the listed criteria.

use std::collections::HashMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use ldbfss_core::adversarial::{discriminator_forward, domain_loss, DomainDiscriminator, Reduction};
use ldbfss_core::autograd::{Graph, Tensor};
use ldbfss_core::cluster::{agglomerative_cluster, best_match_agreement, pairwise_distances, Linkage};
use ldbfss_core::contrastive::{
    batch_normalize, full_sample, k_instance_loss, k_instance_sample, Normalizer, DEFAULT_EPSILON,
};
use ldbfss_core::exec::Mode;
use ldbfss_core::gate::{gate_and_separate, GateHead};
use ldbfss_core::harness::experiments::{run_all, seeded};
use ldbfss_core::harness::gradsuite::run_suite;
use ldbfss_core::harness::{generate_synthetic_batch, median, train, MetricsRecord, TrainConfig, Variant};
use ldbfss_core::io::{parse_embeddings, write_embeddings_csv, write_metrics_csv, EmbeddingBatch};
use ldbfss_core::random::{randn, rng};

mod support;
use support::{brute_sampled, naive_agglomerative, standardize};

const SEEDS: usize = 5;

type Criterion = Box<dyn FnOnce(&mut Runs) -> Outcome>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Final records of training runs, keyed by their resolved config.
#[derive(Default)]
struct Runs {
    finals: HashMap<String, MetricsRecord>,
}

impl Runs {
    fn key(c: &TrainConfig) -> String {
        serde_json::to_string(c).expect("config serializes")
    }

    /// Final records of `SEEDS` consecutive seeds of `config`.
    fn seeds(&mut self, config: &TrainConfig) -> Vec<MetricsRecord> {
        let configs: Vec<TrainConfig> = (0..SEEDS).map(|i| seeded(config, i)).collect();
        self.all(&configs)
    }

    fn all(&mut self, configs: &[TrainConfig]) -> Vec<MetricsRecord> {
        let mut missing: Vec<TrainConfig> = Vec::new();
        for c in configs {
            if !self.finals.contains_key(&Self::key(c)) && !missing.contains(c) {
                missing.push(c.clone());
            }
        }
        let histories = run_all(Mode::default(), &missing).expect("training runs succeed");
        for (c, h) in missing.iter().zip(histories) {
            let last = *h.last().expect("initial record");
            assert!(last.losses.total.is_finite(), "non-finite loss for {}", Self::key(c));
            self.finals.insert(Self::key(c), last);
        }
        configs.iter().map(|c| self.finals[&Self::key(c)]).collect()
    }
}

fn medians(records: &[MetricsRecord], f: fn(&MetricsRecord) -> f64) -> f64 {
    median(&records.iter().map(f).collect::<Vec<_>>())
}

fn list(records: &[MetricsRecord], f: fn(&MetricsRecord) -> f64) -> String {
    records.iter().map(|r| format!("{:.3}", f(r))).collect::<Vec<_>>().join(",")
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cases = run_suite(20).expect("suite runs");
    let elapsed = start.elapsed();
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let worst = cases.iter().map(|c| c.max_error).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && elapsed < Duration::from_secs(10),
        format!(
            "{} cases x 20 seeds, worst rel err {worst:.2e}, {:.2}s, failed {failed:?}",
            cases.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn separation_identity() -> Outcome {
    let config = TrainConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let scale = seed as usize % config.dims.len();
        let c = config.dims[scale];
        let head = GateHead::init(&mut rng(seed), c, c);
        let batch = generate_synthetic_batch(&config, scale, seed).expect("batch");
        let mut g = Graph::new();
        let x = g.constant(batch.features.clone());
        let bound = head.bind(&mut g);
        let sep = gate_and_separate(&mut g, x, &bound).expect("separation");
        let (o, d) = (g.value(sep.object), g.value(sep.domain));
        for i in 0..batch.features.numel() {
            worst = worst.max((o.data()[i] + d.data()[i] - batch.features.data()[i]).abs());
        }
    }
    outcome(worst <= 1e-6, format!("100 batches, max |x_obj + x_dom - x| = {worst:.2e}"))
}

fn contrastive_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut consistent_errors = true;
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let n = r.random_range(2..=32);
        let c = r.random_range(1..=8);
        let classes = r.random_range(1..=4);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let x = randn(&mut r, &[n, c], 1.0);
        for k in [1, 2, 4, 8] {
            let sample = k_instance_sample(&labels, k, seed).expect("sample");
            for normalizer in [Normalizer::Fixed, Normalizer::Adaptive] {
                let mut g = Graph::new();
                let v = g.constant(x.clone());
                let normed = batch_normalize(&mut g, v, DEFAULT_EPSILON).expect("normalize");
                match k_instance_loss(&mut g, normed, &sample, k, normalizer) {
                    Ok(loss) => {
                        let expect = brute_sampled(&standardize(&x, DEFAULT_EPSILON), &labels, &sample, k, normalizer);
                        worst = worst.max((g.value(loss).item() - expect).abs());
                        compared += 1;
                    }
                    Err(_) => consistent_errors &= sample.effective_anchors() == 0,
                }
            }
        }
    }
    let closed = {
        let mut g = Graph::new();
        let v = g.constant(Tensor::full(&[4, 3], 0.4));
        let s = full_sample(&[0, 0, 0, 0]).expect("sample");
        let loss = k_instance_loss(&mut g, v, &s, 3, Normalizer::Fixed).expect("loss");
        (g.value(loss).item() - 0.75 * 3f64.ln()).abs()
    };
    outcome(
        worst <= 1e-9 && closed <= 1e-9 && consistent_errors,
        format!("{compared} batches, max |diff| {worst:.2e}; closed form |diff| {closed:.2e}"),
    )
}

/// True when both labelings induce the same partition of the rows.
fn same_partition(a: &[usize], b: &[usize]) -> bool {
    best_match_agreement(a, b).map(|s| s == 1.0).unwrap_or(false)
}

fn clustering_oracle() -> Outcome {
    let mut mismatches = Vec::new();
    let mut cases = 0;
    for seed in 0..50u64 {
        let mut r = rng(7000 + seed);
        let n = r.random_range(2..=64);
        let c = r.random_range(1..=5);
        let k = r.random_range(1..=n.min(8));
        let x = randn(&mut r, &[n, c], 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let permuted = x.select_rows(&perm);
        for linkage in Linkage::ALL {
            cases += 1;
            let got = agglomerative_cluster(&pairwise_distances(&x), k, linkage).expect("cluster").labels;
            let (expect, _) = naive_agglomerative(&x, k, linkage);
            let again = agglomerative_cluster(&pairwise_distances(&x), k, linkage).expect("cluster").labels;
            let moved = agglomerative_cluster(&pairwise_distances(&permuted), k, linkage).expect("cluster").labels;
            let back: Vec<usize> = perm.iter().map(|&i| got[i]).collect();
            if got != expect || got != again || !same_partition(&moved, &back) {
                mismatches.push(format!("seed {seed} {linkage}"));
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("{cases} cases (N <= 64, 3 linkages), mismatches {mismatches:?}"),
    )
}

fn grl_semantics() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let (n, c, k) = (r.random_range(2..40), r.random_range(1..17), r.random_range(2..7));
        let disc = DomainDiscriminator::init(&mut r, c, c, k);
        let x = randn(&mut r, &[n, c], 1.0);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let coeff = [1.0, 0.3, 2.0][seed as usize % 3];
        let grad = |reverse: bool| {
            let mut g = Graph::new();
            let v = g.param(x.clone());
            let bound = disc.net.bind(&mut g);
            let logits = if reverse {
                discriminator_forward(&mut g, v, &bound, coeff).expect("forward")
            } else {
                bound.forward(&mut g, v).expect("forward")
            };
            let loss = domain_loss(&mut g, logits, &labels, Reduction::Mean).expect("loss");
            g.backward(loss).expect("backward").get(v).expect("gradient").clone()
        };
        let (plain, reversed) = (grad(false), grad(true));
        for (a, b) in reversed.data().iter().zip(plain.data()) {
            worst = worst.max((a + coeff * b).abs());
        }
    }
    outcome(worst <= 1e-12, format!("50 seeds, max |g_rev + c * g| = {worst:.2e}"))
}

fn adversarial_suppression(runs: &mut Runs) -> Outcome {
    let config = TrainConfig::default();
    let chance = config.domain_chance();
    let start = Instant::now();
    let full = runs.seeds(&config);
    let off = runs.seeds(&TrainConfig {
        alpha_dom: 0.0,
        ..config.clone()
    });
    let elapsed = start.elapsed();
    let obj = medians(&full, |r| r.probe_obj);
    let cand = medians(&full, |r| r.probe_cand);
    let obj_off = medians(&off, |r| r.probe_obj);
    let passed = obj <= chance + 0.10 && cand >= chance + 0.25 && obj_off >= chance + 0.20 && elapsed <= Duration::from_secs(600);
    outcome(
        passed,
        format!(
            "chance {chance:.2}; probe_obj {obj:.3} [{}] (<= {:.2}); probe_cand {cand:.3} (>= {:.2}); alpha=0 probe_obj {obj_off:.3} [{}] (>= {:.2}); {:.0}s",
            list(&full, |r| r.probe_obj),
            chance + 0.10,
            chance + 0.25,
            list(&off, |r| r.probe_obj),
            chance + 0.20,
            elapsed.as_secs_f64()
        ),
    )
}

fn contrastive_benefit(runs: &mut Runs) -> Outcome {
    let config = TrainConfig::default();
    let with = runs.seeds(&config);
    let without = runs.seeds(&TrainConfig {
        lambda_con: 0.0,
        ..config
    });
    let (a, b) = (medians(&with, |r| r.silhouette), medians(&without, |r| r.silhouette));
    outcome(
        a - b >= 0.15,
        format!(
            "silhouette lambda=0.5 {a:.3} [{}] vs lambda=0 {b:.3} [{}], gain {:.3} (>= 0.15)",
            list(&with, |r| r.silhouette),
            list(&without, |r| r.silhouette),
            a - b
        ),
    )
}

fn ablation_trend(runs: &mut Runs) -> Outcome {
    let config = TrainConfig::default();
    let metrics: Vec<(Variant, f64)> = Variant::ALL
        .iter()
        .map(|&v| {
            let finals = runs.seeds(&v.apply(&config));
            (v, median(&finals.iter().map(MetricsRecord::eval_metric).collect::<Vec<_>>()))
        })
        .collect();
    let monotone = metrics.windows(2).all(|w| w[1].1 >= w[0].1);
    outcome(
        monotone,
        metrics
            .iter()
            .map(|(v, m)| format!("{} {m:.4}", v.name()))
            .collect::<Vec<_>>()
            .join(" -> "),
    )
}

fn sweep_sanity(runs: &mut Runs) -> Outcome {
    let config = TrainConfig::default();
    let ks = [3, 4, 5, 6];
    let agreement: Vec<f64> = ks
        .iter()
        .map(|&k| {
            let finals = runs.seeds(&TrainConfig {
                clusters: k,
                ..config.clone()
            });
            medians(&finals, |r| r.agreement)
        })
        .collect();
    let peak = ks[(0..ks.len()).max_by(|&a, &b| agreement[a].total_cmp(&agreement[b])).expect("non-empty")];
    let strict = agreement.iter().enumerate().all(|(i, &a)| ks[i] == 4 || a < agreement[1]);
    outcome(
        peak == 4 && strict,
        format!(
            "agreement by k: {} (peak at k = {peak})",
            ks.iter().zip(&agreement).map(|(k, a)| format!("{k}:{a:.3}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn cli_round_trip() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let config = TrainConfig::default();
    let batches: Vec<EmbeddingBatch> = (0..config.dims.len())
        .map(|s| {
            let b = generate_synthetic_batch(&config, s, 3).expect("batch");
            EmbeddingBatch::numbered(s, b.class_labels.clone(), b.features)
        })
        .collect();
    let path = dir.path().join("embeddings.csv");
    write_embeddings_csv(std::fs::File::create(&path).expect("create"), &batches).expect("write");
    let back = parse_embeddings(&path).expect("parse");
    let mut worst: f64 = 0.0;
    let mut layout_ok = back.len() == batches.len();
    for (a, b) in batches.iter().zip(&back) {
        layout_ok &= a.ids == b.ids && a.classes == b.classes && a.features.shape() == b.features.shape();
        for (x, y) in a.features.data().iter().zip(b.features.data()) {
            worst = worst.max((x - y).abs());
        }
    }

    let short = TrainConfig {
        epochs: 10,
        eval_every: 5,
        ..config
    };
    let write_metrics = |p: &Path| {
        let records = train(&short).expect("train");
        write_metrics_csv(std::fs::File::create(p).expect("create"), &records).expect("write");
        std::fs::read(p).expect("read")
    };
    let first = write_metrics(&dir.path().join("a.csv"));
    let second = write_metrics(&dir.path().join("b.csv"));
    outcome(
        layout_ok && worst <= 1e-12 && first == second,
        format!(
            "embedding round trip max |diff| {worst:.2e}; metrics CSV identical: {} ({} bytes)",
            first == second,
            first.len()
        ),
    )
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as --nocapture; they do not apply
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));

    let mut runs = Runs::default();
    let criteria: Vec<(usize, &str, Criterion)> = vec![
        (1, "gradient suite", Box::new(|_| gradient_suite())),
        (2, "separation identity", Box::new(|_| separation_identity())),
        (3, "contrastive oracle", Box::new(|_| contrastive_oracle())),
        (4, "clustering oracle", Box::new(|_| clustering_oracle())),
        (5, "GRL semantics", Box::new(|_| grl_semantics())),
        (6, "adversarial suppression", Box::new(adversarial_suppression)),
        (7, "contrastive benefit", Box::new(contrastive_benefit)),
        (8, "ablation trend", Box::new(ablation_trend)),
        (9, "k-sweep sanity", Box::new(sweep_sanity)),
        (10, "CLI round trip", Box::new(|_| cli_round_trip())),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (n, name, check) in criteria {
        if !wanted(n) {
            continue;
        }
        ran += 1;
        let o = check(&mut runs);
        if !o.passed {
            failed += 1;
        }
        println!("criterion {n:2} {name}: {} | {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
