use crate::data::BatchPairing;
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, LabelMode, Strategy};
use crate::graft::{cutmix_mask, deterministic_topk_mask, graft, mixup, sample_mask, MixMask};
use crate::labelmix::{area_lambda, calibrated_lambda};
use crate::numerics::{sample_beta, RandomStream, Tensor};
use crate::saliency::{normalize, resample, threshold_with_sigma, SaliencyMap};

/// A mini-batch ready for augmentation.
#[derive(Debug, Clone, Copy)]
pub struct BatchView<'a> {
    /// `N×3×H×W`.
    pub x: &'a Tensor,
    pub labels: &'a [usize],
    pub num_classes: usize,
    pub pairing: &'a BatchPairing,
    /// One map per item at any resolution; required by saliency-driven
    /// strategies and by saliency labels.
    pub saliency: Option<&'a [SaliencyMap]>,
}

#[derive(Debug, Clone)]
pub struct AugmentedBatch {
    pub x: Tensor,
    /// Soft targets, `N×classes`.
    pub y: Tensor,
    pub lambdas: Vec<f64>,
    /// Pixel fraction taken from the source image of each pair.
    pub mask_fractions: Vec<f64>,
    /// Region masks of each pair; empty for strategies without a mask.
    pub masks: Vec<MixMask>,
    pub scale: Option<(usize, usize)>,
    pub p_b: Option<f64>,
    /// Pairs whose saliency labels fell back to the area coefficient
    /// because a map was all zeros.
    pub degenerate: usize,
}

impl AugmentedBatch {
    pub fn mean_lambda(&self) -> f64 {
        mean(&self.lambdas)
    }

    pub fn mean_mask_fraction(&self) -> f64 {
        mean(&self.mask_fractions)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One-hot targets, `N×classes`.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Tensor {
    let mut y = vec![0.0f32; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        y[i * num_classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), num_classes], y).expect("target shape")
}

/// Regions kept by deterministic top-k on a grid of `cells`.
pub fn topk_count(fraction: f64, cells: usize) -> usize {
    ((fraction * cells as f64).round() as usize).clamp(1, cells)
}

/// Builds the augmented images and mixed targets for every pair
/// `(i, perm[i])` of the batch.
pub fn augment_batch(cfg: &ExperimentConfig, batch: BatchView<'_>, rng: &mut RandomStream) -> Result<AugmentedBatch> {
    let (n, _, h, w) = match *batch.x.shape() {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::invalid(format!("batch must be N×C×H×W, got {:?}", batch.x.shape()))),
    };
    if batch.labels.len() != n || batch.pairing.perm.len() != n {
        return Err(Error::invalid("labels and pairing must cover the batch"));
    }
    if cfg.strategy == Strategy::Mixup && cfg.label_mode == LabelMode::Saliency {
        return Err(Error::Config("mixup cannot use saliency labels".into()));
    }
    if cfg.strategy == Strategy::Vanilla {
        return Ok(AugmentedBatch {
            x: batch.x.clone(),
            y: one_hot(batch.labels, batch.num_classes),
            lambdas: vec![1.0; n],
            mask_fractions: vec![1.0; n],
            masks: Vec::new(),
            scale: None,
            p_b: None,
            degenerate: 0,
        });
    }
    let needs_maps = cfg.strategy.uses_saliency_masks() || cfg.label_mode == LabelMode::Saliency;
    let maps = match batch.saliency {
        Some(m) if m.len() == n => Some(m),
        Some(_) => return Err(Error::invalid("one saliency map per batch item is required")),
        None if needs_maps => {
            return Err(Error::invalid(format!(
                "{} with {} labels needs saliency maps",
                cfg.strategy, cfg.label_mode
            )))
        }
        None => None,
    };

    // Per-batch draws.
    let g = &cfg.graft;
    let scale = g.scales[rng.below(g.scales.len())];
    let batch_coef = match cfg.strategy {
        Strategy::SaliencyGrafting => Some(match cfg.p_b {
            Some(p) => p,
            None => sample_beta(g.alpha, rng)?,
        }),
        Strategy::Mixup | Strategy::Cutmix => Some(sample_beta(g.alpha, rng)?),
        _ => None,
    };

    let slab = |i: usize| batch.x.slab(i);
    let mut xs = Vec::with_capacity(n);
    let mut y = vec![0.0f32; n * batch.num_classes];
    let (mut lambdas, mut fractions) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut masks = Vec::new();
    let mut degenerate = 0;
    for i in 0..n {
        let j = batch.pairing.perm[i];
        let (x_i, x_j) = (slab(i)?, slab(j)?);
        let (image, lambda, frac) = if cfg.strategy == Strategy::Mixup {
            let l = batch_coef.expect("drawn above");
            (mixup(&x_i, &x_j, l)?, l, l)
        } else {
            let mask = match cfg.strategy {
                Strategy::SaliencyGrafting => {
                    let s = resample(&maps.expect("checked")[i], scale)?;
                    let sp = normalize(&s, g.temperature)?;
                    let bin = threshold_with_sigma(&sp, g.sigma_mode.sigma_for(s.cells()))?;
                    sample_mask(&bin, batch_coef.expect("drawn above"), rng, h, w)?
                }
                Strategy::TopkDeterministic => {
                    let s = resample(&maps.expect("checked")[i], scale)?;
                    deterministic_topk_mask(&s, topk_count(cfg.topk_fraction, s.cells()), h, w)?
                }
                _ => cutmix_mask(h, w, batch_coef.expect("drawn above"), rng)?,
            };
            let area = area_lambda(&mask);
            let lambda = match cfg.label_mode {
                LabelMode::Area => area,
                LabelMode::Saliency => {
                    let m = maps.expect("checked");
                    match saliency_lambda(&m[i], &m[j], &mask) {
                        Ok(l) => l,
                        Err(Error::DegenerateSaliency(_)) => {
                            degenerate += 1;
                            area
                        }
                        Err(e) => return Err(e),
                    }
                }
            };
            let frac = mask.pixel_mask().mean();
            let image = graft(&x_i, &x_j, &mask)?;
            masks.push(mask);
            (image, lambda, frac)
        };
        let row = &mut y[i * batch.num_classes..(i + 1) * batch.num_classes];
        row[batch.labels[i]] += lambda as f32;
        row[batch.labels[j]] += (1.0 - lambda) as f32;
        xs.push(image);
        lambdas.push(lambda);
        fractions.push(frac);
    }
    Ok(AugmentedBatch {
        x: Tensor::stack(&xs)?,
        y: Tensor::new(vec![n, batch.num_classes], y)?,
        lambdas,
        mask_fractions: fractions,
        masks,
        scale: cfg.strategy.uses_saliency_masks().then_some(scale),
        p_b: (cfg.strategy == Strategy::SaliencyGrafting).then_some(batch_coef).flatten(),
        degenerate,
    })
}

/// Saliency coefficient with both maps brought to the mask's grid.
fn saliency_lambda(s_i: &SaliencyMap, s_j: &SaliencyMap, mask: &MixMask) -> Result<f64> {
    let scale = mask.scale();
    calibrated_lambda(&resample(s_i, scale)?, &resample(s_j, scale)?, mask)
}
