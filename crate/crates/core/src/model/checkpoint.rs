use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::network::{TinyCnn, PARAM_NAMES};
use crate::numerics::{sgt, Tensor};

/// `weights.sgt` → `weights.sgt.manifest`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes the parameters as concatenated SGT records plus a text manifest of
/// `name offset shape` lines.
pub fn save_checkpoint(net: &TinyCnn, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let shapes = TinyCnn::shapes(net.num_classes());
    let mut bytes = Vec::new();
    let mut manifest = format!("num_classes {}\n", net.num_classes());
    for ((name, shape), data) in PARAM_NAMES.iter().zip(&shapes).zip(net.params()) {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        manifest.push_str(&format!("{name} {} {}\n", bytes.len(), dims.join("x")));
        sgt::encode_into(&Tensor::new(shape.clone(), data.clone())?, &mut bytes);
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TinyCnn> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let bad = |line: usize, why: &str| Error::invalid(format!("{}:{}: {why}", mpath.display(), line + 1));

    let mut lines = manifest.lines().enumerate();
    let num_classes = match lines.next().map(|(_, l)| l.split_whitespace().collect::<Vec<_>>()) {
        Some(f) if f.len() == 2 && f[0] == "num_classes" => {
            f[1].parse::<usize>().map_err(|_| bad(0, "bad class count"))?
        }
        _ => return Err(bad(0, "expected `num_classes <n>`")),
    };
    let shapes = TinyCnn::shapes(num_classes);
    let mut params: [Vec<f32>; 8] = Default::default();
    let mut seen = [false; 8];
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(bad(ln, "expected `name offset shape`"));
        }
        let idx = PARAM_NAMES
            .iter()
            .position(|n| *n == f[0])
            .ok_or_else(|| bad(ln, "unknown parameter"))?;
        let offset: usize = f[1].parse().map_err(|_| bad(ln, "bad offset"))?;
        let (t, _) = sgt::decode_at(&bytes, offset)?;
        if t.shape() != shapes[idx].as_slice() {
            return Err(Error::ShapeMismatch {
                expected: shapes[idx].clone(),
                actual: t.shape().to_vec(),
            });
        }
        params[idx] = t.into_data();
        seen[idx] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("{}: missing {}", mpath.display(), PARAM_NAMES[i])));
    }
    TinyCnn::from_params(num_classes, params)
}
