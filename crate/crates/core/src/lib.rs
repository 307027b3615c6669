//! Saliency grafting: stochastic saliency-guided patch selection with
//! saliency-calibrated label mixing, plus a small CNN harness for training
//! and evaluating it.

pub mod data;
pub mod error;
pub mod experiments;
pub mod graft;
pub mod labelmix;
pub mod model;
pub mod numerics;
pub mod saliency;

pub use error::{Error, Result};
pub use numerics::{RandomStream, Tensor};
