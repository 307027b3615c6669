//! Datasets: procedural shapes with object masks, CIFAR binary records,
//! per-class subsampling, and paired batching.

mod batching;
mod bundle;
mod cifar;
mod shapes;

pub use batching::{batches, Batch, BatchPairing};
pub use bundle::{export_bundle, import_bundle};
pub use cifar::{load_cifar_binary, parse_cifar_records, CIFAR_PIXELS};
pub use shapes::{generate_shapes, SHAPE_NAMES};

use crate::error::{Error, Result};
use crate::graft::MixMask;
use crate::labelmix::calibrated_lambda;
use crate::numerics::{RandomStream, Tensor};
use crate::saliency::oracle_saliency;

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `3×H×W`, values in `[0,1]`.
    pub pixels: Tensor,
    pub label: usize,
    /// `H×W` binary object support (synthetic data only).
    pub mask: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub items: Vec<LabeledImage>,
}

impl Dataset {
    pub fn new(num_classes: usize, items: Vec<LabeledImage>) -> Result<Self> {
        let mut dims = None;
        for (i, it) in items.iter().enumerate() {
            let d = it.pixels.dims3()?;
            if d.0 != 3 || *dims.get_or_insert(d) != d {
                return Err(Error::invalid(format!("item {i} has pixel shape {:?}", it.pixels.shape())));
            }
            if it.label >= num_classes {
                return Err(Error::invalid(format!("item {i} label {} out of {num_classes}", it.label)));
            }
            if let Some(m) = &it.mask {
                if m.shape() != [d.1, d.2] {
                    return Err(Error::invalid(format!("item {i} mask shape {:?}", m.shape())));
                }
            }
        }
        Ok(Self { num_classes, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(H, W)` of the images, `None` when empty.
    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.items.first().map(|it| (it.pixels.shape()[1], it.pixels.shape()[2]))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for it in &self.items {
            c[it.label] += 1;
        }
        c
    }

    pub fn has_masks(&self) -> bool {
        !self.items.is_empty() && self.items.iter().all(|it| it.mask.is_some())
    }

    /// Pixels of the chosen items stacked to `N×3×H×W`.
    pub fn stack(&self, indices: &[usize]) -> Result<Tensor> {
        let parts: Vec<Tensor> = indices.iter().map(|&i| self.items[i].pixels.clone()).collect();
        Tensor::stack(&parts)
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.items[i].label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            num_classes: self.num_classes,
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }
}

/// Keeps `⌈fraction·n_c⌉` items of every class `c`, drawn uniformly without
/// replacement; survivors stay in their original order.
pub fn subsample_per_class(ds: &Dataset, fraction: f64, rng: &mut RandomStream) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("subsample fraction must lie in (0,1], got {fraction}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, it) in ds.items.iter().enumerate() {
        by_class[it.label].push(i);
    }
    let mut keep = Vec::new();
    for members in &by_class {
        let want = ((fraction * members.len() as f64) - 1e-9).ceil() as usize;
        let perm = rng.permutation(members.len());
        keep.extend(perm[..want.min(members.len())].iter().map(|&p| members[p]));
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Label coefficient with ground-truth object masks standing in for
/// saliency, pooled to the mask's region grid.
pub fn oracle_lambda(mask_i: &Tensor, mask_j: &Tensor, mix: &MixMask) -> Result<f64> {
    let scale = mix.scale();
    let s_i = oracle_saliency(mask_i, false, scale)?;
    let s_j = oracle_saliency(mask_j, false, scale)?;
    calibrated_lambda(&s_i, &s_j, mix)
}

/// Deterministic train/test split: the first `test_per_class` items of each
/// class go to the test set.
pub fn split_per_class(ds: &Dataset, test_per_class: usize) -> (Dataset, Dataset) {
    let mut seen = vec![0; ds.num_classes];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, it) in ds.items.iter().enumerate() {
        if seen[it.label] < test_per_class {
            test.push(i);
        } else {
            train.push(i);
        }
        seen[it.label] += 1;
    }
    (ds.subset(&train), ds.subset(&test))
}
