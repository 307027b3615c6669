use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::numerics::{sgt, Tensor};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleMeta {
    num_classes: usize,
    count: usize,
    height: usize,
    width: usize,
    masks: bool,
}

/// Writes `images.sgt` (`N×3×H×W`), `masks.sgt` (`N×H×W`, when every item
/// has a mask), `labels.csv` and `meta.toml` into `dir`.
pub fn export_bundle(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = ds.image_dims().unwrap_or((0, 0));
    let n = ds.len();
    let mut px = Vec::with_capacity(n * 3 * h * w);
    for it in &ds.items {
        px.extend_from_slice(it.pixels.data());
    }
    sgt::save(&Tensor::new(vec![n, 3, h, w], px)?, dir.join("images.sgt"))?;
    let masks = ds.has_masks();
    if masks {
        let mut m = Vec::with_capacity(n * h * w);
        for it in &ds.items {
            m.extend_from_slice(it.mask.as_ref().expect("checked").data());
        }
        sgt::save(&Tensor::new(vec![n, h, w], m)?, dir.join("masks.sgt"))?;
    }
    let mut csv = String::from("index,label\n");
    for (i, it) in ds.items.iter().enumerate() {
        csv.push_str(&format!("{i},{}\n", it.label));
    }
    let p = dir.join("labels.csv");
    fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    let meta = BundleMeta {
        num_classes: ds.num_classes,
        count: n,
        height: h,
        width: w,
        masks,
    };
    let p = dir.join("meta.toml");
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

pub fn import_bundle(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let p = dir.join("meta.toml");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let meta: BundleMeta = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    let (n, h, w) = (meta.count, meta.height, meta.width);
    let images = sgt::load(dir.join("images.sgt"))?;
    if images.shape() != [n, 3, h, w] {
        return Err(Error::ShapeMismatch {
            expected: vec![n, 3, h, w],
            actual: images.shape().to_vec(),
        });
    }
    let masks = if meta.masks {
        let m = sgt::load(dir.join("masks.sgt"))?;
        if m.shape() != [n, h, w] {
            return Err(Error::ShapeMismatch {
                expected: vec![n, h, w],
                actual: m.shape().to_vec(),
            });
        }
        Some(m)
    } else {
        None
    };
    let p = dir.join("labels.csv");
    let csv = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut lines = csv.lines();
    if lines.next() != Some("index,label") {
        return Err(Error::Config(format!("{}: missing `index,label` header", p.display())));
    }
    let mut labels = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let label = line
            .split_once(',')
            .filter(|(idx, _)| idx.parse::<usize>().ok() == Some(i))
            .and_then(|(_, l)| l.parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("{}:{}: bad row `{line}`", p.display(), i + 2)))?;
        labels.push(label);
    }
    if labels.len() != n {
        return Err(Error::Config(format!("{}: {} rows for {n} images", p.display(), labels.len())));
    }
    let mut items = Vec::with_capacity(n);
    for (i, label) in labels.into_iter().enumerate() {
        items.push(LabeledImage {
            pixels: images.slab(i)?,
            label,
            mask: masks.as_ref().map(|m| m.slab(i)).transpose()?,
        });
    }
    Dataset::new(meta.num_classes, items)
}
