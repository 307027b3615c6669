use crate::error::{Error, Result};
use crate::model::network::{Gradients, Network, TinyCnn, PARAM_NAMES};
use crate::numerics::{RandomStream, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-3;

/// Coordinates probed per parameter tensor; smaller tensors are probed fully.
pub const PROBES_PER_TENSOR: usize = 48;

/// Agreement of one parameter tensor's analytic and numeric gradients on the
/// probed coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub name: &'static str,
    pub probed: usize,
    /// `max|a − n| / max(max|a|, max|n|)`; zero when both vanish.
    pub max_rel_error: f64,
    /// Probes whose ±step flipped a ReLU or pool selection.
    pub kinks: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.passed)
    }

    pub fn worst(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }
}

/// Analytic gradient provider: `(net, x, n, h, w, targets) → grads`.
pub type BackwardFn<'a> = dyn Fn(&Network<f64>, &[f64], usize, usize, usize, &[f64]) -> Gradients<f64> + 'a;

/// Compare backprop against central finite differences of the loss, run in
/// `f64` on a copy of `model`.
///
/// The differenced loss keeps every ReLU gate and pool selection fixed at the
/// unperturbed point. Where no gate flips within the step this is the plain
/// loss; where one does, it is the smooth branch whose slope backprop reports,
/// so kinks near the probe do not masquerade as gradient errors. Flips are
/// counted in [`LayerCheck::kinks`].
pub fn finite_diff_check(model: &TinyCnn, x: &Tensor, targets: &Tensor, tolerance: f64) -> Result<GradCheckReport> {
    finite_diff_check_with(model, x, targets, tolerance, &|net, x, n, h, w, t| {
        net.loss_and_grads_raw(x, n, h, w, t).1
    })
}

/// As [`finite_diff_check`] with a substitute backward pass.
pub fn finite_diff_check_with(
    model: &TinyCnn,
    x: &Tensor,
    targets: &Tensor,
    tolerance: f64,
    backward: &BackwardFn<'_>,
) -> Result<GradCheckReport> {
    let (n, h, w) = TinyCnn::check_input(x.shape())?;
    if targets.shape() != [n, model.num_classes()] {
        return Err(Error::ShapeMismatch {
            expected: vec![n, model.num_classes()],
            actual: targets.shape().to_vec(),
        });
    }
    let mut net: Network<f64> = model.cast();
    let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let ts: Vec<f64> = targets.data().iter().map(|&v| v as f64).collect();
    let analytic = backward(&net, &xs, n, h, w, &ts);
    let gates = net.trace(&xs, n, h, w).gates();
    let mut pick = RandomStream::new(0x6772_6164);

    let mut layers = Vec::with_capacity(PARAM_NAMES.len());
    for (t, name) in PARAM_NAMES.iter().enumerate() {
        let len = net.params()[t].len();
        let coords: Vec<usize> = if len <= PROBES_PER_TENSOR {
            (0..len).collect()
        } else {
            pick.permutation(len)[..PROBES_PER_TENSOR].to_vec()
        };
        let (mut diff, mut scale, mut kinks) = (0.0f64, 0.0f64, 0);
        for &c in &coords {
            let orig = net.params()[t][c];
            net.params_mut()[t][c] = orig + FD_STEP;
            let (up, g_up) = net.loss_gated(&xs, n, h, w, &ts, &gates);
            net.params_mut()[t][c] = orig - FD_STEP;
            let (down, g_down) = net.loss_gated(&xs, n, h, w, &ts, &gates);
            if g_up != gates || g_down != gates {
                kinks += 1;
            }
            net.params_mut()[t][c] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.tensors[t][c];
            diff = diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        let max_rel_error = if scale == 0.0 { 0.0 } else { diff / scale };
        layers.push(LayerCheck {
            name,
            probed: coords.len(),
            max_rel_error,
            kinks,
            passed: max_rel_error <= tolerance,
        });
    }
    Ok(GradCheckReport { tolerance, layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(seed: u64) -> (TinyCnn, Tensor, Tensor) {
        let mut rng = RandomStream::new(seed);
        let net = TinyCnn::new(4, &mut rng);
        let x = Tensor::new(vec![2, 3, 8, 8], (0..2 * 3 * 64).map(|_| rng.uniform() as f32).collect()).unwrap();
        let t = Tensor::from_rows(&[[0.25, 0.75, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]).unwrap();
        (net, x, t)
    }

    #[test]
    fn fresh_net_passes() {
        let (net, x, t) = case(3);
        let r = finite_diff_check(&net, &x, &t, 1e-3).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn corrupted_backward_fails() {
        let (net, x, t) = case(4);
        let r = finite_diff_check_with(&net, &x, &t, 1e-3, &|net, x, n, h, w, t| {
            let mut g = net.loss_and_grads_raw(x, n, h, w, t).1;
            g.tensors[2].iter_mut().for_each(|v| *v *= 1.05);
            g
        })
        .unwrap();
        assert!(!r.passed());
        assert!(!r.layers[2].passed && r.layers[0].passed);
    }
}
