//! Dense tensors, the few elementwise/pooling kernels the augmentation needs,
//! random sampling, and the SGT interchange format.

mod ops;
mod random;
pub mod sgt;
mod tensor;

pub use ops::{avg_pool_to, block_of, block_start, block_upsample, hadamard, l2_norm};
pub use random::{sample_bernoulli_grid, sample_beta, RandomStream};
pub use tensor::Tensor;
