//! Synthetic candidate features with planted class and domain structure.
//!
//! Each scale has its own world: one prototype per class (a random direction
//! over all coordinates) and one offset per domain. Domain offsets are
//! orthogonal and confined to a random subset of coordinates, which also
//! carry class signal. A candidate is `prototype + offset + noise`, or
//! `offset + noise` for an injected background candidate.

use rand::seq::index::sample;
use rand::Rng;

use crate::autograd::Tensor;
use crate::detection::BBox;
use crate::error::Result;
use crate::harness::config::TrainConfig;
use crate::random::{derive_seed, normal, rng, uniform, SeededRng};

const WORLD_TAG: u64 = 0x5752_4c44;
const META_TAG: u64 = 0x4d45_5441;
const FEATURE_TAG: u64 = 0x4645_4154;

/// Side length of the fixed anchor box every candidate regresses from.
pub const ANCHOR_SIZE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub scale: usize,
    pub features: Tensor,
    pub class_labels: Vec<usize>,
    pub true_domain: Option<Vec<usize>>,
    /// Anchor boxes the box head predicts offsets from.
    pub pred_boxes: Vec<BBox>,
    pub gt_boxes: Vec<BBox>,
    /// 1 for object candidates, 0 for background.
    pub objectness_targets: Vec<f64>,
}

impl FeatureBatch {
    pub fn len(&self) -> usize {
        self.class_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_labels.is_empty()
    }

    /// Rows with objectness target 1.
    pub fn object_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.objectness_targets[i] > 0.5).collect()
    }

    /// The batch restricted to `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            scale: self.scale,
            features: self.features.select_rows(rows),
            class_labels: rows.iter().map(|&i| self.class_labels[i]).collect(),
            true_domain: self
                .true_domain
                .as_ref()
                .map(|d| rows.iter().map(|&i| d[i]).collect()),
            pred_boxes: rows.iter().map(|&i| self.pred_boxes[i]).collect(),
            gt_boxes: rows.iter().map(|&i| self.gt_boxes[i]).collect(),
            objectness_targets: rows.iter().map(|&i| self.objectness_targets[i]).collect(),
        }
    }
}

/// Fixed generative parameters of one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub channels: usize,
    pub prototypes: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<f64>>,
    /// Coordinates spanned by the domain offsets, ascending.
    pub domain_coords: Vec<usize>,
    /// Typical `(w, h)` of each class's boxes.
    pub box_shapes: Vec<(f64, f64)>,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl World {
    pub fn new(config: &TrainConfig, scale: usize) -> Self {
        let c = config.dims[scale];
        let mut r = rng(derive_seed(derive_seed(config.seed, WORLD_TAG), scale as u64));
        let prototypes = (0..config.num_classes)
            .map(|_| {
                let v = unit((0..c).map(|_| normal(&mut r)).collect());
                v.into_iter().map(|x| x * config.class_scale).collect()
            })
            .collect();

        let width = config
            .num_domains_planted
            .max((config.domain_fraction * c as f64).round() as usize)
            .min(c);
        let mut domain_coords = sample(&mut r, c, width).into_vec();
        domain_coords.sort_unstable();
        // Gram-Schmidt inside the chosen coordinates
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < config.num_domains_planted {
            let mut v: Vec<f64> = (0..width).map(|_| normal(&mut r)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                basis.push(unit(v));
            }
        }
        let offsets = basis
            .iter()
            .map(|b| {
                let mut full = vec![0.0; c];
                for (k, &j) in domain_coords.iter().enumerate() {
                    full[j] = b[k] * config.domain_scale;
                }
                full
            })
            .collect();

        // box shapes belong to the class, not the scale
        let mut rb = rng(derive_seed(config.seed, WORLD_TAG));
        let box_shapes = (0..config.num_classes)
            .map(|_| (uniform(&mut rb, 0.1, 0.4), uniform(&mut rb, 0.1, 0.4)))
            .collect();
        Self {
            channels: c,
            prototypes,
            offsets,
            domain_coords,
            box_shapes,
        }
    }
}

/// Per-row draws shared by every scale of one batch.
#[derive(Debug, Clone, PartialEq)]
struct RowMeta {
    class: usize,
    domain: usize,
    object: bool,
    center: (f64, f64),
    size_jitter: (f64, f64),
    anchor_jitter: (f64, f64),
}

fn draw_class(r: &mut SeededRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = r.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn draw_meta(config: &TrainConfig, rows: usize, seed: u64) -> Vec<RowMeta> {
    let mut r = rng(derive_seed(seed, META_TAG));
    (0..rows)
        .map(|_| RowMeta {
            class: draw_class(&mut r, &config.class_weights),
            domain: r.random_range(0..config.num_domains_planted),
            object: r.random::<f64>() >= config.background_fraction,
            center: (uniform(&mut r, 0.25, 0.75), uniform(&mut r, 0.25, 0.75)),
            size_jitter: (1.0 + 0.1 * normal(&mut r), 1.0 + 0.1 * normal(&mut r)),
            anchor_jitter: (0.02 * normal(&mut r), 0.02 * normal(&mut r)),
        })
        .collect()
}

/// `rows` candidates of one scale. Row metadata (class, domain, boxes)
/// depends only on `seed`, so all scales of one seed describe the same
/// candidates.
pub fn generate_rows(config: &TrainConfig, scale: usize, rows: usize, seed: u64) -> Result<FeatureBatch> {
    let world = World::new(config, scale);
    let meta = draw_meta(config, rows, seed);
    let c = world.channels;
    let per_coord = config.noise_std / (c as f64).sqrt();
    let mut r = rng(derive_seed(derive_seed(seed, FEATURE_TAG), scale as u64));
    let mut data = Vec::with_capacity(rows * c);
    let mut pred_boxes = Vec::with_capacity(rows);
    let mut gt_boxes = Vec::with_capacity(rows);
    for m in &meta {
        for j in 0..c {
            let proto = if m.object { world.prototypes[m.class][j] } else { 0.0 };
            data.push(proto + world.offsets[m.domain][j] + per_coord * normal(&mut r));
        }
        let (w, h) = world.box_shapes[m.class];
        gt_boxes.push(BBox::from_center(
            m.center.0,
            m.center.1,
            w * m.size_jitter.0.max(0.5),
            h * m.size_jitter.1.max(0.5),
        )?);
        pred_boxes.push(BBox::from_center(
            m.center.0 + m.anchor_jitter.0,
            m.center.1 + m.anchor_jitter.1,
            ANCHOR_SIZE,
            ANCHOR_SIZE,
        )?);
    }
    Ok(FeatureBatch {
        scale,
        features: Tensor::matrix(rows, c, data)?,
        class_labels: meta.iter().map(|m| m.class).collect(),
        true_domain: Some(meta.iter().map(|m| m.domain).collect()),
        pred_boxes,
        gt_boxes,
        objectness_targets: meta.iter().map(|m| if m.object { 1.0 } else { 0.0 }).collect(),
    })
}

/// One training batch of `config.batch_size` candidates.
pub fn generate_synthetic_batch(config: &TrainConfig, scale: usize, seed: u64) -> Result<FeatureBatch> {
    generate_rows(config, scale, config.batch_size, seed)
}
