//! Mixing masks and the image-side mixing functions: stochastic saliency
//! grafting, deterministic top-k selection, Mixup, CutMix, and top-k
//! occlusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{block_upsample, hadamard, sample_bernoulli_grid, RandomStream, Tensor};
use crate::saliency::{normalize, threshold, BinarySaliency, SaliencyMap};

/// Binary region grid `M` together with its pixel-level expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct MixMask {
    region_grid: Tensor,
    pixel_mask: Tensor,
}

impl MixMask {
    /// Expand a binary region grid onto an `h×w` image.
    pub fn from_region_grid(region_grid: Tensor, h: usize, w: usize) -> Result<Self> {
        region_grid.dims2()?;
        if region_grid.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("mix mask must be 0/1 valued"));
        }
        let pixel_mask = block_upsample(&region_grid, h, w)?;
        Ok(Self {
            region_grid,
            pixel_mask,
        })
    }

    pub fn full(scale: (usize, usize), h: usize, w: usize, on: bool) -> Result<Self> {
        let v = if on { 1.0 } else { 0.0 };
        Self::from_region_grid(Tensor::full([scale.0, scale.1], v), h, w)
    }

    pub fn region_grid(&self) -> &Tensor {
        &self.region_grid
    }

    pub fn pixel_mask(&self) -> &Tensor {
        &self.pixel_mask
    }

    pub fn scale(&self) -> (usize, usize) {
        (self.region_grid.shape()[0], self.region_grid.shape()[1])
    }

    pub fn region_count(&self) -> usize {
        self.region_grid.data().iter().filter(|&&v| v == 1.0).count()
    }

    /// Fraction of regions selected.
    pub fn region_fraction(&self) -> f64 {
        self.region_count() as f64 / self.region_grid.len() as f64
    }

    /// The mask with every region flipped.
    pub fn complement(&self) -> MixMask {
        MixMask {
            region_grid: self.region_grid.map(|v| 1.0 - v),
            pixel_mask: self.pixel_mask.map(|v| 1.0 - v),
        }
    }
}

/// How the normalized saliency is binarized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// `σ_mean = 1/(H_s·W_s)`.
    Mean,
    /// A fixed probability threshold.
    Fixed(f64),
    /// A multiple of `σ_mean`; keeps a sweep comparable across grid sizes.
    MeanFraction(f64),
}

impl SigmaMode {
    pub fn sigma_for(self, cells: usize) -> f64 {
        match self {
            SigmaMode::Mean => 1.0 / cells as f64,
            SigmaMode::Fixed(s) => s,
            SigmaMode::MeanFraction(f) => f / cells as f64,
        }
    }
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;

    /// `mean`, a number (`0.01`), or a multiple of the mean (`0.5x`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "mean" {
            return Ok(SigmaMode::Mean);
        }
        let parse = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|x| *x >= 0.0)
                .ok_or_else(|| Error::invalid(format!("bad sigma `{s}`")))
        };
        match s.strip_suffix('x') {
            Some(f) => Ok(SigmaMode::MeanFraction(parse(f)?)),
            None => Ok(SigmaMode::Fixed(parse(s)?)),
        }
    }
}

impl std::fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SigmaMode::Mean => write!(f, "mean"),
            SigmaMode::Fixed(v) => write!(f, "{v}"),
            SigmaMode::MeanFraction(v) => write!(f, "{v}x"),
        }
    }
}

/// Hyperparameters of the grafting augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraftConfig {
    /// `p_B ~ Beta(alpha, alpha)`.
    pub alpha: f64,
    pub temperature: f64,
    /// Candidate saliency resolutions; one is drawn per mini-batch.
    pub scales: Vec<(usize, usize)>,
    pub warmup_epochs: usize,
    pub sigma_mode: SigmaMode,
}

impl Default for GraftConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            temperature: 0.2,
            scales: vec![(4, 4), (8, 8)],
            warmup_epochs: 5,
            sigma_mode: SigmaMode::Mean,
        }
    }
}

impl GraftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.scales.is_empty() || self.scales.iter().any(|&(h, w)| h == 0 || w == 0) {
            return Err(Error::Config("scales must be non-empty and non-zero".into()));
        }
        if let SigmaMode::Fixed(s) | SigmaMode::MeanFraction(s) = self.sigma_mode {
            if !(s >= 0.0) {
                return Err(Error::Config(format!("sigma must be non-negative, got {s}")));
            }
        }
        Ok(())
    }
}

/// `M = P ⊙ S″` with `P` an i.i.d. Bernoulli(`p_b`) region grid, expanded to
/// an `h×w` pixel mask.
pub fn sample_mask(
    binary: &BinarySaliency,
    p_b: f64,
    rng: &mut RandomStream,
    h: usize,
    w: usize,
) -> Result<MixMask> {
    let (hs, ws) = binary.dims();
    let keep = sample_bernoulli_grid(p_b, hs, ws, rng)?;
    MixMask::from_region_grid(hadamard(&keep, binary.grid())?, h, w)
}

/// `M ⊙ x_i + (1 − M) ⊙ x_j` with one `H×W` mask shared by every channel.
pub fn graft(x_i: &Tensor, x_j: &Tensor, mask: &MixMask) -> Result<Tensor> {
    x_i.ensure_same_shape(x_j)?;
    let (_, h, w) = x_i.dims3()?;
    let m = mask.pixel_mask();
    if m.shape() != [h, w] {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            actual: m.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut out = x_j.clone();
    for (dst, src) in out
        .data_mut()
        .chunks_exact_mut(plane)
        .zip(x_i.data().chunks_exact(plane))
    {
        for ((d, &s), &keep) in dst.iter_mut().zip(src).zip(m.data()) {
            if keep == 1.0 {
                *d = s;
            }
        }
    }
    Ok(out)
}

/// Region indices ordered by descending saliency, ties by row-major index.
fn ranked_regions(s: &SaliencyMap) -> Vec<usize> {
    let v = s.grid().data();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// Select exactly the `k` most salient regions.
pub fn deterministic_topk_mask(s: &SaliencyMap, k: usize, h: usize, w: usize) -> Result<MixMask> {
    let n = s.cells();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("top-k needs 1 <= k <= {n}, got {k}")));
    }
    let (hs, ws) = s.dims();
    let mut grid = Tensor::zeros([hs, ws]);
    for &i in ranked_regions(s).iter().take(k) {
        grid.data_mut()[i] = 1.0;
    }
    MixMask::from_region_grid(grid, h, w)
}

/// Mean number of regions above `σ_mean` at temperature `t`, over `maps`.
pub fn mean_selected_count(maps: &[SaliencyMap], t: f64) -> Result<f64> {
    let mut total = 0usize;
    for m in maps {
        total += threshold(&normalize(m, t)?).count();
    }
    Ok(total as f64 / maps.len() as f64)
}

const CALIBRATION_ITERS: usize = 60;
const CALIBRATION_TOLERANCE: f64 = 0.25;
/// Temperatures searched by calibration.
pub const CALIBRATION_RANGE: (f64, f64) = (1e-3, 1e3);
const LOG_T_MIN: f64 = -6.907_755_278_982_137; // ln 1e-3
const LOG_T_MAX: f64 = 6.907_755_278_982_137; // ln 1e3

/// Find a temperature such that `p_mean · E[#cells above σ_mean] ≈ k`.
///
/// The selected count is non-decreasing in `T`: a cell passes iff its score
/// exceeds `T·ln(mean(exp(S/T)))`, a power mean that falls monotonically
/// from `max S` toward `mean S` as `T` grows. Bisection over `ln T` is
/// therefore sound. The result is within ±0.25 of `k`, otherwise an error
/// reports the achievable range.
pub fn calibrate_temperature(maps: &[SaliencyMap], k: f64, p_mean: f64) -> Result<f64> {
    if maps.is_empty() {
        return Err(Error::invalid("calibration needs at least one saliency map"));
    }
    calibrate_temperature_multiscale(&[maps], k, p_mean)
}

/// [`calibrate_temperature`] over maps at several grid sizes. Each set's
/// selected count is rescaled to the finest grid and the sets are averaged,
/// so `k` is a count on the finest grid.
pub fn calibrate_temperature_multiscale(sets: &[&[SaliencyMap]], k: f64, p_mean: f64) -> Result<f64> {
    if sets.is_empty() || sets.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("calibration needs at least one saliency map per scale"));
    }
    let cells = sets.iter().map(|s| s[0].cells()).max().expect("non-empty");
    if !(k > 0.0 && k < cells as f64) {
        return Err(Error::invalid(format!("k must lie in (0, {cells}), got {k}")));
    }
    if !(p_mean > 0.0 && p_mean <= 1.0) {
        return Err(Error::invalid(format!("p_mean must lie in (0, 1], got {p_mean}")));
    }
    let expected = |log_t: f64| -> Result<f64> {
        let mut acc = 0.0;
        for set in sets {
            acc += mean_selected_count(set, log_t.exp())? * cells as f64 / set[0].cells() as f64;
        }
        Ok(p_mean * acc / sets.len() as f64)
    };

    let (lo_val, hi_val) = (expected(LOG_T_MIN)?, expected(LOG_T_MAX)?);
    let (mut lo, mut hi) = (LOG_T_MIN, LOG_T_MAX);
    for _ in 0..CALIBRATION_ITERS {
        let mid = 0.5 * (lo + hi);
        let got = expected(mid)?;
        if (got - k).abs() <= CALIBRATION_TOLERANCE {
            return Ok(mid.exp());
        }
        if got < k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for (val, log_t) in [(lo_val, LOG_T_MIN), (hi_val, LOG_T_MAX)] {
        if (val - k).abs() <= CALIBRATION_TOLERANCE {
            return Ok(log_t.exp());
        }
    }
    Err(Error::CalibrationUnreachable {
        target: k,
        min: lo_val.min(hi_val),
        max: lo_val.max(hi_val),
    })
}

/// `λ·x_i + (1 − λ)·x_j`.
pub fn mixup(x_i: &Tensor, x_j: &Tensor, lambda: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0,1], got {lambda}")));
    }
    let l = lambda as f32;
    x_i.zip_map(x_j, |a, b| l * a + (1.0 - l) * b)
}

/// Axis-aligned cut rectangle: rows `top..top+height`, cols `left..left+width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Sides `floor(√λ·H) × floor(√λ·W)` placed by its centre; the centre range
/// keeps the rectangle inside the image.
pub fn cutmix_rect(h: usize, w: usize, lambda: f64, center: (usize, usize)) -> CutRect {
    let side = lambda.sqrt();
    let height = ((side * h as f64).floor() as usize).min(h);
    let width = ((side * w as f64).floor() as usize).min(w);
    let top = center.0.saturating_sub(height / 2).min(h - height);
    let left = center.1.saturating_sub(width / 2).min(w - width);
    CutRect {
        top,
        left,
        height,
        width,
    }
}

/// Paste `rect` of `x_i` onto `x_j`; returns the image and the pasted area
/// fraction.
pub fn cutmix_with_rect(x_i: &Tensor, x_j: &Tensor, rect: CutRect) -> Result<(Tensor, f64)> {
    x_i.ensure_same_shape(x_j)?;
    let (_, h, w) = x_i.dims3()?;
    if rect.top + rect.height > h || rect.left + rect.width > w {
        return Err(Error::invalid("cut rectangle exceeds the image"));
    }
    let mut grid = Tensor::zeros([h, w]);
    for r in rect.top..rect.top + rect.height {
        for c in rect.left..rect.left + rect.width {
            grid.data_mut()[r * w + c] = 1.0;
        }
    }
    let mask = MixMask {
        region_grid: grid.clone(),
        pixel_mask: grid,
    };
    let area = (rect.height * rect.width) as f64 / (h * w) as f64;
    Ok((graft(x_i, x_j, &mask)?, area))
}

/// CutMix with a uniformly placed rectangle of area close to `λ·H·W`.
pub fn cutmix(x_i: &Tensor, x_j: &Tensor, lambda: f64, rng: &mut RandomStream) -> Result<(Tensor, f64)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0,1], got {lambda}")));
    }
    let (_, h, w) = x_i.dims3()?;
    let probe = cutmix_rect(h, w, lambda, (0, 0));
    // Centres for which the rectangle fits: top ranges over 0..=h-height.
    let top = rng.below(h - probe.height + 1);
    let left = rng.below(w - probe.width + 1);
    let rect = CutRect { top, left, ..probe };
    cutmix_with_rect(x_i, x_j, rect)
}

/// CutMix rectangle as a pixel-resolution mask (`region_grid` is `h×w`).
pub fn cutmix_mask(h: usize, w: usize, lambda: f64, rng: &mut RandomStream) -> Result<MixMask> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0,1], got {lambda}")));
    }
    let probe = cutmix_rect(h, w, lambda, (0, 0));
    let top = rng.below(h - probe.height + 1);
    let left = rng.below(w - probe.width + 1);
    let grid = Tensor::from_fn2(h, w, |r, c| {
        let inside = (top..top + probe.height).contains(&r) && (left..left + probe.width).contains(&c);
        if inside {
            1.0
        } else {
            0.0
        }
    });
    MixMask::from_region_grid(grid, h, w)
}

/// Zero every channel inside the `ceil(fraction·n)` most salient regions.
pub fn occlude_topk(x: &Tensor, s: &SaliencyMap, fraction: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction must lie in [0,1], got {fraction}")));
    }
    let (_, h, w) = x.dims3()?;
    let n = s.cells();
    let k = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if k == 0 {
        return Ok(x.clone());
    }
    let keep = deterministic_topk_mask(s, k, h, w)?.complement();
    graft(x, &Tensor::zeros(x.shape().to_vec()), &keep)
}
