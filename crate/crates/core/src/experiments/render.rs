use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One preview row: source | destination | source with the mask overlaid |
/// result.
#[derive(Debug, Clone)]
pub struct PreviewRow {
    pub source: Tensor,
    pub destination: Tensor,
    pub mask: Option<Tensor>,
    pub result: Tensor,
}

const ZOOM: u32 = 4;
const GAP: u32 = 2;

fn put_image(canvas: &mut RgbImage, img: &Tensor, dim: Option<&Tensor>, x0: u32, y0: u32) -> Result<()> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::invalid("preview images must have 3 channels"));
    }
    let d = img.data();
    for y in 0..h {
        for x in 0..w {
            let keep = dim.map_or(true, |m| m.data()[y * w + x] == 1.0);
            let k = if keep { 1.0 } else { 0.25 };
            let px: [u8; 3] = std::array::from_fn(|ch| {
                (d[(ch * h + y) * w + x].clamp(0.0, 1.0) * k * 255.0).round() as u8
            });
            for dy in 0..ZOOM {
                for dx in 0..ZOOM {
                    canvas.put_pixel(x0 + x as u32 * ZOOM + dx, y0 + y as u32 * ZOOM + dy, Rgb(px));
                }
            }
        }
    }
    Ok(())
}

/// Four-column preview grid, nearest-neighbour zoomed.
pub fn render_preview(rows: &[PreviewRow]) -> Result<RgbImage> {
    let (h, w) = match rows.first() {
        Some(r) => {
            let (_, h, w) = r.source.dims3()?;
            (h as u32, w as u32)
        }
        None => (1, 1),
    };
    let (cw, ch) = (w * ZOOM + GAP, h * ZOOM + GAP);
    let mut canvas = RgbImage::from_pixel(4 * cw + GAP, rows.len().max(1) as u32 * ch + GAP, Rgb([255, 255, 255]));
    for (r, row) in rows.iter().enumerate() {
        let y0 = GAP + r as u32 * ch;
        put_image(&mut canvas, &row.source, None, GAP, y0)?;
        put_image(&mut canvas, &row.destination, None, GAP + cw, y0)?;
        put_image(&mut canvas, &row.source, row.mask.as_ref(), GAP + 2 * cw, y0)?;
        put_image(&mut canvas, &row.result, None, GAP + 3 * cw, y0)?;
    }
    Ok(canvas)
}

/// Bars of `mean` with `±err` whiskers on a zero-based axis with a
/// gridline every 10 units.
pub fn render_bars(bars: &[(f64, f64)]) -> RgbImage {
    const BAR: u32 = 24;
    const SPACE: u32 = 12;
    const HEIGHT: u32 = 240;
    const PAD: u32 = 10;
    let top = bars.iter().map(|(m, e)| m + e).fold(1.0f64, f64::max) * 1.1;
    let width = PAD * 2 + bars.len().max(1) as u32 * (BAR + SPACE);
    let mut img = RgbImage::from_pixel(width, HEIGHT + 2 * PAD, Rgb([255, 255, 255]));
    let y_of = |v: f64| PAD + HEIGHT - ((v.max(0.0) / top) * HEIGHT as f64).round().min(HEIGHT as f64) as u32;
    let mut g = 0.0;
    while g <= top {
        let y = y_of(g);
        for x in PAD..width - PAD {
            img.put_pixel(x, y, Rgb([220, 220, 220]));
        }
        g += 10.0;
    }
    let palette = [[70, 110, 180], [200, 110, 60], [90, 160, 90], [160, 90, 160], [120, 120, 120]];
    for (i, &(mean, err)) in bars.iter().enumerate() {
        let x0 = PAD + SPACE / 2 + i as u32 * (BAR + SPACE);
        for y in y_of(mean)..=y_of(0.0) {
            for x in x0..x0 + BAR {
                img.put_pixel(x, y, Rgb(palette[i % palette.len()]));
            }
        }
        let (lo, hi) = (y_of(mean - err), y_of(mean + err));
        let cx = x0 + BAR / 2;
        for y in hi..=lo {
            img.put_pixel(cx, y, Rgb([0, 0, 0]));
        }
        for x in cx - 4..=cx + 4 {
            img.put_pixel(x, lo, Rgb([0, 0, 0]));
            img.put_pixel(x, hi, Rgb([0, 0, 0]));
        }
    }
    img
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    img.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}
