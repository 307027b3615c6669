use crate::error::{Error, Result};
use crate::model::network::{Gradients, Network};
use crate::model::real::Real;

/// SGD with heavy-ball momentum and L2 weight decay folded into the
/// velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<R = f32> {
    pub lr: R,
    pub momentum: R,
    pub weight_decay: R,
    velocity: [Vec<R>; 8],
}

impl<R: Real> SgdState<R> {
    pub fn new(net: &Network<R>, lr: R, momentum: R, weight_decay: R) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: std::array::from_fn(|i| vec![R::zero(); net.params()[i].len()]),
        }
    }

    pub fn velocity(&self) -> &[Vec<R>; 8] {
        &self.velocity
    }
}

/// `v ← m·v + g + wd·θ`, then `θ ← θ − lr·v`.
pub fn sgd_step<R: Real>(net: &mut Network<R>, grads: &Gradients<R>, state: &mut SgdState<R>) -> Result<()> {
    for ((p, g), v) in net.params().iter().zip(&grads.tensors).zip(&state.velocity) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![p.len()],
                actual: vec![g.len(), v.len()],
            });
        }
    }
    let (lr, m, wd) = (state.lr, state.momentum, state.weight_decay);
    for ((p, g), v) in net.params_mut().iter_mut().zip(&grads.tensors).zip(&mut state.velocity) {
        for ((theta, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = m * *v + g + wd * *theta;
            *theta = *theta - lr * *v;
        }
    }
    Ok(())
}

/// Base rate decayed ×0.1 at 50% and again at 75% of the run.
pub fn step_decay_lr(base: f32, epoch: usize, epochs: usize) -> f32 {
    let mut lr = base;
    if 2 * epoch >= epochs {
        lr *= 0.1;
    }
    if 4 * epoch >= 3 * epochs {
        lr *= 0.1;
    }
    lr
}
