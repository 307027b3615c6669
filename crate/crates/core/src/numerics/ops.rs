use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, |x, y| x * y)
}

/// Euclidean norm over all entries, accumulated in `f64`.
pub fn l2_norm(t: &Tensor) -> f64 {
    t.data()
        .iter()
        .map(|&v| {
            let v = v as f64;
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Start index of block `i` when `n` cells are split into `parts` blocks:
/// `round(i·n/parts)`, with halves rounded up.
pub fn block_start(i: usize, n: usize, parts: usize) -> usize {
    (2 * i * n + parts) / (2 * parts)
}

/// Block index owning cell `r` under the same partition as [`block_start`].
pub fn block_of(r: usize, n: usize, parts: usize) -> usize {
    // Largest i with block_start(i) <= r; start is monotone in i.
    let mut i = (r * parts) / n;
    while i + 1 < parts && block_start(i + 1, n, parts) <= r {
        i += 1;
    }
    while i > 0 && block_start(i, n, parts) > r {
        i -= 1;
    }
    i
}

/// Mean-pool a 2D map down to `hs×ws` over the rounded-boundary partition.
pub fn avg_pool_to(s: &Tensor, hs: usize, ws: usize) -> Result<Tensor> {
    let (h, w) = s.dims2()?;
    if hs == 0 || ws == 0 {
        return Err(Error::invalid("pooling target has a zero dimension"));
    }
    if hs > h || ws > w {
        return Err(Error::invalid(format!(
            "cannot pool {h}x{w} up to {hs}x{ws}"
        )));
    }
    let src = s.data();
    let mut out = Vec::with_capacity(hs * ws);
    for i in 0..hs {
        let (r0, r1) = (block_start(i, h, hs), block_start(i + 1, h, hs));
        for j in 0..ws {
            let (c0, c1) = (block_start(j, w, ws), block_start(j + 1, w, ws));
            let mut acc = 0.0f64;
            for r in r0..r1 {
                for c in c0..c1 {
                    acc += src[r * w + c] as f64;
                }
            }
            out.push((acc / ((r1 - r0) * (c1 - c0)) as f64) as f32);
        }
    }
    Tensor::new(vec![hs, ws], out)
}

/// Expand a region grid to `h×w` pixels; every pixel copies its region's value.
///
/// Regions use the same rounded partition as [`avg_pool_to`], which reduces to
/// `floor(r·rows/h)` whenever `rows` divides `h`.
pub fn block_upsample(m: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (rows, cols) = m.dims2()?;
    if h < rows || w < cols || rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "cannot expand {rows}x{cols} regions to {h}x{w} pixels"
        )));
    }
    let col_of: Vec<usize> = (0..w).map(|c| block_of(c, w, cols)).collect();
    let src = m.data();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let row = block_of(r, h, rows) * cols;
        out.extend(col_of.iter().map(|&c| src[row + c]));
    }
    Tensor::new(vec![h, w], out)
}
