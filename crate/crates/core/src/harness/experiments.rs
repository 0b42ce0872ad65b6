//! Multi-seed runs, the cluster-count sweep and the incremental ablation.
//!
//! Independent runs execute through [`exec`](crate::exec), so they spread
//! over the rayon pool when the `parallel` feature is on. Each run is
//! itself sequential and deterministic.

use serde::{Deserialize, Serialize};

use crate::contrastive::Normalizer;
use crate::detection::LossBreakdown;
use crate::error::{contract, Result};
use crate::exec::{self, Mode};
use crate::harness::config::{Sampling, TrainConfig};
use crate::harness::train::{train, MetricsRecord};

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Field-wise median of records (the epoch of the first is kept).
pub fn median_record(records: &[MetricsRecord]) -> MetricsRecord {
    let m = |f: fn(&MetricsRecord) -> f64| median(&records.iter().map(f).collect::<Vec<_>>());
    MetricsRecord {
        epoch: records.first().map_or(0, |r| r.epoch),
        losses: LossBreakdown {
            cls: m(|r| r.losses.cls),
            conf: m(|r| r.losses.conf),
            reg: m(|r| r.losses.reg),
            con: m(|r| r.losses.con),
            dom: m(|r| r.losses.dom),
            total: m(|r| r.losses.total),
        },
        probe_obj: m(|r| r.probe_obj),
        probe_cand: m(|r| r.probe_cand),
        silhouette: m(|r| r.silhouette),
        agreement: m(|r| r.agreement),
        class_accuracy: m(|r| r.class_accuracy),
    }
}

/// `config` with seed `config.seed + i`.
pub fn seeded(config: &TrainConfig, i: usize) -> TrainConfig {
    TrainConfig {
        seed: config.seed.wrapping_add(i as u64),
        ..config.clone()
    }
}

/// Runs every config and returns their histories in input order.
pub fn run_all(mode: Mode, configs: &[TrainConfig]) -> Result<Vec<Vec<MetricsRecord>>> {
    exec::map(mode, configs, train).into_iter().collect()
}

/// Histories of `seeds` runs with consecutive seeds.
pub fn run_seeds(config: &TrainConfig, seeds: usize) -> Result<Vec<Vec<MetricsRecord>>> {
    run_seeds_with(Mode::default(), config, seeds)
}

pub fn run_seeds_with(mode: Mode, config: &TrainConfig, seeds: usize) -> Result<Vec<Vec<MetricsRecord>>> {
    let configs: Vec<TrainConfig> = (0..seeds).map(|i| seeded(config, i)).collect();
    run_all(mode, &configs)
}

fn last(history: &[MetricsRecord]) -> MetricsRecord {
    *history.last().expect("a run always has its initial record")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    /// Final record of each seed.
    pub finals: Vec<MetricsRecord>,
    /// Field-wise median of `finals`.
    pub summary: MetricsRecord,
}

/// Trains once per `(k, seed)` with shared seeds across `k`.
pub fn sweep_k(config: &TrainConfig, k_values: &[usize], seeds: usize) -> Result<Vec<SweepRow>> {
    sweep_k_with(Mode::default(), config, k_values, seeds)
}

pub fn sweep_k_with(mode: Mode, config: &TrainConfig, k_values: &[usize], seeds: usize) -> Result<Vec<SweepRow>> {
    if seeds == 0 {
        return contract("sweep needs at least one seed");
    }
    if let Some(k) = k_values.iter().find(|&&k| k == 0 || k > config.batch_size) {
        return contract(format!("k = {k} must lie in [1, batch_size = {}]", config.batch_size));
    }
    let configs: Vec<TrainConfig> = k_values
        .iter()
        .flat_map(|&k| {
            (0..seeds).map(move |i| TrainConfig {
                clusters: k,
                ..seeded(config, i)
            })
        })
        .collect();
    let histories = run_all(mode, &configs)?;
    Ok(k_values
        .iter()
        .zip(histories.chunks(seeds))
        .map(|(&k, runs)| {
            let finals: Vec<MetricsRecord> = runs.iter().map(|h| last(h)).collect();
            SweepRow {
                k,
                summary: median_record(&finals),
                finals,
            }
        })
        .collect())
}

/// Incremental ablation variants, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Detection losses only.
    Baseline,
    /// Plus a supervised contrastive loss over every object candidate.
    Contrastive,
    /// The contrastive loss restricted to `K` instances per class.
    KInstance,
    /// Plus the adversarial loss on clustered pseudo domains.
    LatentDomain,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Contrastive, Variant::KInstance, Variant::LatentDomain];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Contrastive => "contrastive",
            Variant::KInstance => "k_instance",
            Variant::LatentDomain => "latent_domain",
        }
    }

    /// The variant's settings on top of `base`.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Baseline => {
                c.lambda_con = 0.0;
                c.alpha_dom = 0.0;
            }
            Variant::Contrastive => {
                c.alpha_dom = 0.0;
                c.sampling = Sampling::All;
                c.normalizer = Normalizer::Adaptive;
            }
            Variant::KInstance => {
                c.alpha_dom = 0.0;
                c.sampling = Sampling::KInstance;
                c.normalizer = Normalizer::Fixed;
            }
            Variant::LatentDomain => {
                c.sampling = Sampling::KInstance;
                c.normalizer = Normalizer::Fixed;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub initial: MetricsRecord,
    pub summary: MetricsRecord,
    /// [`MetricsRecord::eval_metric`] of each seed's final record.
    pub metrics: Vec<f64>,
    pub median_metric: f64,
}

pub fn ablate(config: &TrainConfig, seeds: usize) -> Result<Vec<AblationRow>> {
    ablate_with(Mode::default(), config, seeds)
}

pub fn ablate_with(mode: Mode, config: &TrainConfig, seeds: usize) -> Result<Vec<AblationRow>> {
    if seeds == 0 {
        return contract("ablation needs at least one seed");
    }
    let configs: Vec<TrainConfig> = Variant::ALL
        .iter()
        .flat_map(|v| (0..seeds).map(move |i| v.apply(&seeded(config, i))))
        .collect();
    let histories = run_all(mode, &configs)?;
    Ok(Variant::ALL
        .iter()
        .zip(histories.chunks(seeds))
        .map(|(&variant, runs)| {
            let finals: Vec<MetricsRecord> = runs.iter().map(|h| last(h)).collect();
            let initials: Vec<MetricsRecord> = runs.iter().map(|h| h[0]).collect();
            let metrics: Vec<f64> = finals.iter().map(MetricsRecord::eval_metric).collect();
            AblationRow {
                variant,
                initial: median_record(&initials),
                summary: median_record(&finals),
                median_metric: median(&metrics),
                metrics,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            dims: vec![6],
            epochs: 1,
            batch_size: 20,
            batches_per_epoch: 1,
            eval_size: 40,
            clusters: 3,
            instances: 3,
            num_domains_planted: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn single_k_sweep_matches_plain_run() {
        let c = TrainConfig { clusters: 4, ..tiny() };
        let rows = sweep_k(&c, &[4], 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].finals[0], *train(&c).unwrap().last().unwrap());
    }

    #[test]
    fn sweep_rejects_oversized_k() {
        assert!(sweep_k(&tiny(), &[21], 1).is_err());
    }

    #[test]
    fn ablation_variants_share_initial_state() {
        let rows = ablate(&tiny(), 2).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.variant.name()).collect();
        assert_eq!(names, ["baseline", "contrastive", "k_instance", "latent_domain"]);
        // losses differ only through the weights; the representation is shared
        for r in &rows[1..] {
            assert_eq!(r.initial.probe_obj, rows[0].initial.probe_obj);
            assert_eq!(r.initial.silhouette, rows[0].initial.silhouette);
            assert_eq!(r.initial.class_accuracy, rows[0].initial.class_accuracy);
        }
    }

    #[test]
    fn modes_agree() {
        let a = run_seeds_with(Mode::Sequential, &tiny(), 2).unwrap();
        let b = run_seeds_with(Mode::Parallel, &tiny(), 2).unwrap();
        assert_eq!(a, b);
    }
}
