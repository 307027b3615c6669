//! Label mixing: saliency-calibrated coefficient and the area baseline.

use crate::error::{Error, Result};
use crate::graft::MixMask;
use crate::numerics::{l2_norm, Tensor};
use crate::saliency::SaliencyMap;

/// Probability vector over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel(Vec<f32>);

const SIMPLEX_TOL: f64 = 1e-5;

impl SoftLabel {
    pub fn new(probs: Vec<f32>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("soft label entries must be finite and non-negative"));
        }
        let total: f64 = probs.iter().map(|&p| p as f64).sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("soft label sums to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::invalid(format!("class {class} out of {num_classes}")));
        }
        let mut v = vec![0.0; num_classes];
        v[class] = 1.0;
        Ok(Self(v))
    }

    pub fn probs(&self) -> &[f32] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// `‖S ⊙ M‖₂ / ‖S‖₂`, or with `complement` `‖S ⊙ (1 − M)‖₂ / ‖S‖₂`.
///
/// `mask` is a binary grid at the saliency resolution.
pub fn importance(s: &SaliencyMap, mask: &Tensor, complement: bool) -> Result<f64> {
    s.grid().ensure_same_shape(mask)?;
    let total = l2_norm(s.grid());
    if total == 0.0 {
        return Err(Error::DegenerateSaliency(
            "importance of an all-zero saliency map".into(),
        ));
    }
    let kept: f64 = s
        .grid()
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| (m == 1.0) != complement)
        .map(|(&v, _)| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    Ok((kept / total).clamp(0.0, 1.0))
}

/// `λ = I(S_i, M) / (I(S_i, M) + I(S_j, 1 − M))`.
pub fn calibrated_lambda(s_i: &SaliencyMap, s_j: &SaliencyMap, mask: &MixMask) -> Result<f64> {
    let src = importance(s_i, mask.region_grid(), false)?;
    let dst = importance(s_j, mask.region_grid(), true)?;
    let denom = src + dst;
    if denom == 0.0 {
        return Err(Error::DegenerateSaliency(
            "both importances vanish under the mask".into(),
        ));
    }
    Ok(src / denom)
}

/// Fraction of regions pasted from the source.
pub fn area_lambda(mask: &MixMask) -> f64 {
    mask.region_fraction()
}

/// `λ·y_i + (1 − λ)·y_j`.
pub fn mix_labels(y_i: &SoftLabel, y_j: &SoftLabel, lambda: f64) -> Result<SoftLabel> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0,1], got {lambda}")));
    }
    if y_i.num_classes() != y_j.num_classes() {
        return Err(Error::ShapeMismatch {
            expected: vec![y_i.num_classes()],
            actual: vec![y_j.num_classes()],
        });
    }
    let mixed = y_i
        .0
        .iter()
        .zip(&y_j.0)
        .map(|(&a, &b)| (lambda * a as f64 + (1.0 - lambda) * b as f64) as f32)
        .collect();
    Ok(SoftLabel(mixed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform4() -> SaliencyMap {
        SaliencyMap::new(Tensor::ones([2, 2])).unwrap()
    }

    fn one_cell_mask() -> MixMask {
        MixMask::from_region_grid(Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap(), 4, 4).unwrap()
    }

    #[test]
    fn importance_examples() {
        let s = uniform4();
        assert_eq!(importance(&s, &Tensor::ones([2, 2]), false).unwrap(), 1.0);
        assert_eq!(importance(&s, &Tensor::zeros([2, 2]), false).unwrap(), 0.0);
        let m = one_cell_mask();
        let i = importance(&s, m.region_grid(), true).unwrap();
        assert!((i - 3f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn importance_rejects_zero_map() {
        let z = SaliencyMap::new(Tensor::zeros([2, 2])).unwrap();
        assert!(matches!(
            importance(&z, &Tensor::ones([2, 2]), false),
            Err(Error::DegenerateSaliency(_))
        ));
        assert!(importance(&uniform4(), &Tensor::ones([3, 1]), false).is_err());
    }

    #[test]
    fn lambda_examples() {
        let s = uniform4();
        let ones = MixMask::full((2, 2), 4, 4, true).unwrap();
        let zeros = MixMask::full((2, 2), 4, 4, false).unwrap();
        assert_eq!(calibrated_lambda(&s, &s, &ones).unwrap(), 1.0);
        assert_eq!(calibrated_lambda(&s, &s, &zeros).unwrap(), 0.0);
        // 0.5 / (0.5 + sqrt(3)/2) to 20 digits
        let l = calibrated_lambda(&s, &s, &one_cell_mask()).unwrap();
        assert!((l - 0.36602540378443864676).abs() < 1e-12, "{l}");
    }

    #[test]
    fn area_examples() {
        assert_eq!(area_lambda(&MixMask::full((2, 2), 4, 4, true).unwrap()), 1.0);
        assert_eq!(area_lambda(&MixMask::full((2, 2), 4, 4, false).unwrap()), 0.0);
        assert_eq!(area_lambda(&one_cell_mask()), 0.25);
    }

    #[test]
    fn mix_label_examples() {
        let a = SoftLabel::one_hot(0, 4).unwrap();
        let b = SoftLabel::one_hot(1, 4).unwrap();
        assert_eq!(mix_labels(&a, &b, 1.0).unwrap(), a);
        assert_eq!(mix_labels(&a, &b, 0.0).unwrap(), b);
        let m = mix_labels(&a, &b, 0.366).unwrap();
        assert_eq!(m.probs(), &[0.366, 0.634, 0.0, 0.0]);
        assert!(mix_labels(&a, &b, -0.1).is_err());
        assert!(mix_labels(&a, &SoftLabel::one_hot(0, 3).unwrap(), 0.5).is_err());
    }

    #[test]
    fn soft_label_validation() {
        assert!(SoftLabel::new(vec![0.5, 0.5]).is_ok());
        assert!(SoftLabel::new(vec![0.5, 0.6]).is_err());
        assert!(SoftLabel::new(vec![1.5, -0.5]).is_err());
        assert!(SoftLabel::one_hot(3, 3).is_err());
    }
}
