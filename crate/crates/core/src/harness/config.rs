//! Run configuration with documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::Reduction;
use crate::cluster::Linkage;
use crate::contrastive::Normalizer;
use crate::detection::{DEFAULT_ALPHA_DOM, DEFAULT_LAMBDA_CON};
use crate::error::{contract, Error, Result};

/// How the contrastive sample is drawn from the object candidates of a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// At most `instances` rows per class.
    #[default]
    KInstance,
    /// Every object row.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Feature width of each scale.
    pub dims: Vec<usize>,
    pub num_classes: usize,
    /// Relative class frequencies; imbalanced on purpose.
    pub class_weights: Vec<f64>,
    pub num_domains_planted: usize,
    /// Pseudo domain count `k`.
    pub clusters: usize,
    /// Instances per class `K`.
    pub instances: usize,
    pub lambda_con: f64,
    pub alpha_dom: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub linkage: Linkage,
    pub grl_coeff: f64,
    pub reduction: Reduction,
    pub normalizer: Normalizer,
    pub sampling: Sampling,
    pub eval_every: usize,
    pub eval_size: usize,
    /// Expected norm of the per-candidate noise vector.
    pub noise_std: f64,
    /// Norm of every class prototype.
    pub class_scale: f64,
    /// Norm of every domain offset.
    pub domain_scale: f64,
    pub background_fraction: f64,
    /// Share of coordinates spanned by the domain offsets (at least one
    /// coordinate per planted domain).
    pub domain_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dims: vec![16, 32, 64],
            num_classes: 3,
            class_weights: vec![0.55, 0.3, 0.15],
            num_domains_planted: 4,
            clusters: 5,
            instances: 32,
            lambda_con: DEFAULT_LAMBDA_CON,
            alpha_dom: DEFAULT_ALPHA_DOM,
            epochs: 200,
            batch_size: 64,
            batches_per_epoch: 16,
            learning_rate: 0.01,
            momentum: 0.937,
            weight_decay: 5e-4,
            seed: 0,
            linkage: Linkage::Average,
            grl_coeff: 1.0,
            reduction: Reduction::Mean,
            normalizer: Normalizer::Fixed,
            sampling: Sampling::KInstance,
            eval_every: 20,
            eval_size: 256,
            noise_std: 1.0,
            class_scale: 1.5,
            domain_scale: 3.0,
            background_fraction: 0.25,
            domain_fraction: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| contract::<()>(msg);
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad(format!("dims must be non-empty and positive, got {:?}", self.dims));
        }
        for (name, v) in [
            ("num_classes", self.num_classes),
            ("num_domains_planted", self.num_domains_planted),
            ("clusters", self.clusters),
            ("instances", self.instances),
            ("batch_size", self.batch_size),
            ("batches_per_epoch", self.batches_per_epoch),
            ("eval_every", self.eval_every),
            ("eval_size", self.eval_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.class_weights.len() != self.num_classes {
            return Err(Error::Shape {
                op: "TrainConfig::class_weights",
                left: vec![self.class_weights.len()],
                right: vec![self.num_classes],
            });
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("class_weights must be positive".into());
        }
        if self.clusters > self.batch_size {
            return bad(format!(
                "clusters k = {} exceeds batch_size {}",
                self.clusters, self.batch_size
            ));
        }
        if self.eval_size < self.batch_size {
            return bad("eval_size must be at least batch_size".into());
        }
        let min_dim = *self.dims.iter().min().unwrap();
        if self.num_domains_planted > min_dim {
            return bad(format!(
                "{} planted domains need feature width at least that large, smallest is {min_dim}",
                self.num_domains_planted
            ));
        }
        for (name, v) in [
            ("lambda_con", self.lambda_con),
            ("alpha_dom", self.alpha_dom),
            ("weight_decay", self.weight_decay),
            ("noise_std", self.noise_std),
            ("class_scale", self.class_scale),
            ("domain_scale", self.domain_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)".into());
        }
        if !(self.grl_coeff.is_finite() && self.grl_coeff > 0.0) {
            return bad("grl_coeff must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.domain_fraction) {
            return bad("domain_fraction must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return bad("background_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Uniform-guess accuracy for the planted domains.
    pub fn domain_chance(&self) -> f64 {
        1.0 / self.num_domains_planted as f64
    }
}

/// A [`TrainConfig`] document plus the output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfigFile {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        let map = match value.as_object_mut() {
            Some(m) => m,
            None => return contract("config must be a JSON object"),
        };
        let output_dir = match map.remove("output_dir") {
            None => PathBuf::from("out"),
            Some(serde_json::Value::String(s)) => PathBuf::from(s),
            Some(other) => return contract(format!("output_dir must be a string, got {other}")),
        };
        let train: TrainConfig = serde_json::from_value(value)?;
        train.validate()?;
        Ok(Self { train, output_dir })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
