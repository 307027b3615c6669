use std::fs;
use std::path::Path;

use crate::data::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Pixel bytes per record: 3 planes of 32×32.
pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

pub fn load_cifar_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let record = if bytes.len() % (CIFAR_PIXELS + 1) == 0 {
        CIFAR_PIXELS + 1
    } else if bytes.len() % (CIFAR_PIXELS + 2) == 0 {
        CIFAR_PIXELS + 2
    } else {
        let whole = bytes.len() / (CIFAR_PIXELS + 1) * (CIFAR_PIXELS + 1);
        return Err(Error::Format {
            what: "CIFAR binary file",
            offset: whole as u64,
            reason: format!(
                "{} bytes is not a whole number of {}- or {}-byte records",
                bytes.len(),
                CIFAR_PIXELS + 1,
                CIFAR_PIXELS + 2
            ),
        });
    };
    parse_cifar_records(&bytes, record)
}

/// Parses records of `record_len` bytes: 3073 (one label byte, 10 classes)
/// or 3074 (coarse then fine label byte, 100 fine classes).
pub fn parse_cifar_records(bytes: &[u8], record_len: usize) -> Result<Dataset> {
    let (label_bytes, num_classes) = match record_len {
        l if l == CIFAR_PIXELS + 1 => (1, 10),
        l if l == CIFAR_PIXELS + 2 => (2, 100),
        _ => {
            return Err(Error::invalid(format!(
                "CIFAR record length must be 3073 or 3074, got {record_len}"
            )))
        }
    };
    let whole = bytes.len() / record_len * record_len;
    if whole != bytes.len() {
        return Err(Error::Format {
            what: "CIFAR binary file",
            offset: whole as u64,
            reason: format!("truncated record: {} of {record_len} bytes", bytes.len() - whole),
        });
    }
    let mut items = Vec::with_capacity(bytes.len() / record_len);
    for (r, rec) in bytes.chunks_exact(record_len).enumerate() {
        let label = rec[label_bytes - 1] as usize;
        if label >= num_classes {
            return Err(Error::Format {
                what: "CIFAR binary file",
                offset: (r * record_len + label_bytes - 1) as u64,
                reason: format!("label {label} out of {num_classes}"),
            });
        }
        let pixels = rec[label_bytes..].iter().map(|&b| b as f32 / 255.0).collect();
        items.push(LabeledImage {
            pixels: Tensor::new(vec![3, 32, 32], pixels)?,
            label,
            mask: None,
        });
    }
    Dataset::new(num_classes, items)
}
