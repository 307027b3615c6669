use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::RandomStream;

/// Partner assignment inside a batch: position `i` is paired with position
/// `perm[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPairing {
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Dataset indices.
    pub indices: Vec<usize>,
    pub pairing: BatchPairing,
}

/// One epoch of shuffled batches, each with a fresh partner permutation.
/// The last batch may be smaller.
pub fn batches(ds: &Dataset, batch_size: usize, rng: &mut RandomStream) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::invalid(format!("batch size must be at least 2, got {batch_size}")));
    }
    let order = rng.permutation(ds.len());
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            indices: chunk.to_vec(),
            pairing: BatchPairing {
                perm: rng.permutation(chunk.len()),
            },
        })
        .collect())
}
