//! A small CNN with hand-written backprop, exposing its last conv feature
//! maps as the forward saliency source.

mod checkpoint;
mod gradcheck;
mod network;
mod optim;
mod real;

pub use checkpoint::{load_checkpoint, manifest_path, save_checkpoint};
pub use gradcheck::{
    finite_diff_check, finite_diff_check_with, BackwardFn, GradCheckReport, LayerCheck, FD_STEP, PROBES_PER_TENSOR,
};
pub use network::{
    Backprop, ForwardOutput, Gradients, Network, TinyCnn, FEATURE_CHANNELS, INPUT_CHANNELS, INPUT_SHIFT, PARAM_NAMES,
};
pub use optim::{sgd_step, step_decay_lr, SgdState};
pub use real::Real;
