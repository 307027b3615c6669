//! Saliency maps: generation from feature maps, temperature softmax,
//! mean thresholding, and multi-scale resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{avg_pool_to, block_upsample, Tensor};

/// Where saliency maps come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaliencyKind {
    /// Channel-collapsed absolute activations of the last conv layer.
    Forward,
    /// Class activation map of the label's classifier weights.
    Cam,
    /// Ground-truth object mask (synthetic data only).
    Oracle,
    /// Ground-truth mask smoothed by a 3×3 mean filter.
    OracleBlurred,
    /// Precomputed maps loaded from an SGT file.
    External,
}

impl SaliencyKind {
    pub fn name(self) -> &'static str {
        match self {
            SaliencyKind::Forward => "forward",
            SaliencyKind::Cam => "cam",
            SaliencyKind::Oracle => "oracle",
            SaliencyKind::OracleBlurred => "oracle-blurred",
            SaliencyKind::External => "external",
        }
    }
}

impl std::str::FromStr for SaliencyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "forward" => SaliencyKind::Forward,
            "cam" => SaliencyKind::Cam,
            "oracle" => SaliencyKind::Oracle,
            "oracle-blurred" | "oracle_blurred" => SaliencyKind::OracleBlurred,
            "external" => SaliencyKind::External,
            other => return Err(Error::invalid(format!("unknown saliency kind `{other}`"))),
        })
    }
}

/// Non-negative, finite 2D region scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap(Tensor);

impl SaliencyMap {
    pub fn new(grid: Tensor) -> Result<Self> {
        grid.dims2()?;
        if let Some(bad) = grid.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!(
                "saliency entries must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Tensor {
        &self.0
    }

    pub fn into_grid(self) -> Tensor {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.0.shape()[0], self.0.shape()[1])
    }

    pub fn cells(&self) -> usize {
        self.0.len()
    }

    /// `c·S` for `c ≥ 0`.
    pub fn scaled(&self, c: f32) -> Result<Self> {
        Self::new(self.0.scale(c))
    }
}

/// Temperature softmax of a saliency map.
///
/// Probabilities are kept in `f64` so that thresholds compare exactly against
/// `1/n`; `grid` is the `f32` view.
#[derive(Debug, Clone)]
pub struct NormalizedSaliency {
    grid: Tensor,
    probs: Vec<f64>,
    temperature: f64,
}

impl NormalizedSaliency {
    /// Wrap an already normalized grid (used for fixtures and external input).
    pub fn from_probs(grid: Tensor, temperature: f64) -> Result<Self> {
        grid.dims2()?;
        let probs = grid.data().iter().map(|&p| p as f64).collect();
        Ok(Self {
            grid,
            probs,
            temperature,
        })
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.grid.shape()[0], self.grid.shape()[1])
    }

    /// `σ_mean`: the mean of the normalized map, `1/(H_s·W_s)`.
    pub fn mean_threshold(&self) -> f64 {
        1.0 / self.probs.len() as f64
    }
}

/// `{0,1}` region grid of selected cells.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySaliency(Tensor);

impl BinarySaliency {
    pub fn new(grid: Tensor) -> Result<Self> {
        grid.dims2()?;
        if grid.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("binary saliency must be 0/1 valued"));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Tensor {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.0.shape()[0], self.0.shape()[1])
    }
}

/// `S[h,w] = Σ_c |A[c,h,w]|` over a `C×H×W` feature map.
pub fn forward_saliency(features: &Tensor) -> Result<SaliencyMap> {
    let (c, h, w) = features.dims3()?;
    let plane = h * w;
    let mut out = vec![0.0f32; plane];
    for ch in features.data().chunks_exact(plane).take(c) {
        for (o, &a) in out.iter_mut().zip(ch) {
            *o += a.abs();
        }
    }
    SaliencyMap::new(Tensor::new(vec![h, w], out)?)
}

/// Class activation map `max(0, Σ_c w_c·A_c)` for one class's weights.
pub fn cam_saliency(features: &Tensor, weights: &Tensor) -> Result<SaliencyMap> {
    let (c, h, w) = features.dims3()?;
    if weights.len() != c {
        return Err(Error::ShapeMismatch {
            expected: vec![c],
            actual: weights.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut acc = vec![0.0f64; plane];
    for (ch, &wc) in features.data().chunks_exact(plane).zip(weights.data()) {
        for (o, &a) in acc.iter_mut().zip(ch) {
            *o += wc as f64 * a as f64;
        }
    }
    let out = acc.into_iter().map(|v| v.max(0.0) as f32).collect();
    SaliencyMap::new(Tensor::new(vec![h, w], out)?)
}

/// Temperature softmax, stabilized by subtracting the maximum.
pub fn normalize(s: &SaliencyMap, temperature: f64) -> Result<NormalizedSaliency> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let grid = s.grid();
    let max = grid.max() as f64;
    let mut probs: Vec<f64> = grid
        .data()
        .iter()
        .map(|&v| ((v as f64 - max) / temperature).exp())
        .collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    let data = probs.iter().map(|&p| p as f32).collect();
    Ok(NormalizedSaliency {
        grid: Tensor::new(grid.shape().to_vec(), data)?,
        probs,
        temperature,
    })
}

/// Binarize at `σ_mean`: a cell is selected iff its probability strictly
/// exceeds the map mean. A uniform map therefore selects nothing.
pub fn threshold(sp: &NormalizedSaliency) -> BinarySaliency {
    select_above(sp, sp.mean_threshold())
}

/// Binarize at an explicit `σ ≥ 0`; `σ = 0` selects every cell.
pub fn threshold_with_sigma(sp: &NormalizedSaliency, sigma: f64) -> Result<BinarySaliency> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be non-negative, got {sigma}")));
    }
    Ok(select_above(sp, sigma))
}

fn select_above(sp: &NormalizedSaliency, sigma: f64) -> BinarySaliency {
    let (h, w) = sp.dims();
    // Softmax outputs are strictly positive even where exp() underflows.
    let data = sp
        .probs
        .iter()
        .map(|&p| if p > sigma || sigma == 0.0 { 1.0 } else { 0.0 })
        .collect();
    BinarySaliency(Tensor::new(vec![h, w], data).expect("grid shape"))
}

/// Resample to `hs×ws`: mean pooling when shrinking, block replication when
/// growing. Both preserve the map mean for evenly divisible sizes.
pub fn resample(s: &SaliencyMap, scale: (usize, usize)) -> Result<SaliencyMap> {
    let (hs, ws) = scale;
    if hs == 0 || ws == 0 {
        return Err(Error::invalid("resample scale has a zero dimension"));
    }
    let (h, w) = s.dims();
    if (hs, ws) == (h, w) {
        return Ok(s.clone());
    }
    let pooled = if hs < h || ws < w {
        avg_pool_to(s.grid(), hs.min(h), ws.min(w))?
    } else {
        s.grid().clone()
    };
    let (ph, pw) = pooled.dims2()?;
    let out = if (ph, pw) == (hs, ws) {
        pooled
    } else {
        block_upsample(&pooled, hs, ws)?
    };
    SaliencyMap::new(out)
}

/// 3×3 mean filter; border pixels average over their in-bounds neighbours.
pub fn box_blur3(mask: &Tensor) -> Result<Tensor> {
    let (h, w) = mask.dims2()?;
    Ok(Tensor::from_fn2(h, w, |r, c| {
        let mut acc = 0.0f32;
        let mut n = 0u32;
        for rr in r.saturating_sub(1)..(r + 2).min(h) {
            for cc in c.saturating_sub(1)..(c + 2).min(w) {
                acc += mask.at2(rr, cc);
                n += 1;
            }
        }
        acc / n as f32
    }))
}

/// Saliency from a ground-truth pixel mask pooled onto a region grid.
pub fn oracle_saliency(mask: &Tensor, blur: bool, scale: (usize, usize)) -> Result<SaliencyMap> {
    let base = if blur { box_blur3(mask)? } else { mask.clone() };
    resample(&SaliencyMap::new(base)?, scale)
}
