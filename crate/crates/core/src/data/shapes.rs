use crate::data::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::numerics::{RandomStream, Tensor};

pub const SHAPE_NAMES: [&str; 10] = [
    "disk", "square", "triangle", "plus", "ring", "diamond", "cross", "frame", "half-disk", "ell",
];

/// Membership of `(u, v)` (image-aligned, `v` pointing down, object radius
/// normalized to 1) in class `class`'s shape.
fn inside(class: usize, u: f64, v: f64) -> bool {
    let r2 = u * u + v * v;
    let box_ = u.abs().max(v.abs());
    match class {
        0 => r2 <= 1.0,
        1 => box_ <= 0.8,
        2 => (-0.85..=0.85).contains(&v) && u.abs() <= (v + 0.85) * 0.55,
        3 => (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95),
        4 => (0.3..=1.0).contains(&r2),
        5 => u.abs() + v.abs() <= 1.0,
        6 => box_ <= 0.85 && ((u - v).abs() <= 0.4 || (u + v).abs() <= 0.4),
        7 => box_ <= 0.9 && box_ >= 0.5,
        8 => r2 <= 1.0 && v <= 0.15,
        _ => {
            let stem = (-0.85..=-0.3).contains(&u) && v.abs() <= 0.9;
            let foot = (0.35..=0.9).contains(&v) && (-0.85..=0.8).contains(&u);
            stem || foot
        }
    }
}

fn background(size: usize, rng: &mut RandomStream) -> ([f64; 3], Vec<f64>) {
    let base: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(0.15, 0.85));
    let theta = rng.uniform_range(0.0, std::f64::consts::PI);
    let freq = rng.uniform_range(0.3, 1.2);
    let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
    let amp = rng.uniform_range(0.05, 0.2);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(-1.0, 1.0));
    let mut px = vec![0.0; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let wave = (freq * (x as f64 * theta.cos() + y as f64 * theta.sin()) + phase).sin();
            for c in 0..3 {
                let noise = rng.uniform_range(-0.12, 0.12);
                px[(c * size + y) * size + x] = base[c] + amp * wave * tint[c] + noise;
            }
        }
    }
    (base, px)
}

fn render(class: usize, size: usize, rng: &mut RandomStream) -> LabeledImage {
    let s = size as f64;
    let (base, mut px) = background(size, rng);
    let color = loop {
        let c: [f64; 3] = std::array::from_fn(|_| rng.uniform());
        if c.iter().zip(&base).map(|(a, b)| (a - b).abs()).sum::<f64>() >= 0.6 {
            break c;
        }
    };
    // A few flat blobs in the object's colour family make it less trivial
    // to classify from colour statistics alone.
    for _ in 0..rng.below(3) {
        let (cy, cx) = (rng.below(size), rng.below(size));
        let half = 1 + rng.below(2);
        let shade = rng.uniform_range(0.6, 1.0);
        for y in cy.saturating_sub(half)..(cy + half).min(size) {
            for x in cx.saturating_sub(half)..(cx + half).min(size) {
                for c in 0..3 {
                    px[(c * size + y) * size + x] = shade * color[c];
                }
            }
        }
    }
    let mut mask = vec![0.0f32; size * size];
    loop {
        let radius = rng.uniform_range(0.3, 0.48) * s;
        let cy = rng.uniform_range(radius, s - radius);
        let cx = rng.uniform_range(radius, s - radius);
        let mut any = false;
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 + 0.5 - cx) / radius;
                let v = (y as f64 + 0.5 - cy) / radius;
                let on = inside(class, u, v);
                mask[y * size + x] = if on { 1.0 } else { 0.0 };
                any |= on;
            }
        }
        if any {
            break;
        }
    }
    for (i, &m) in mask.iter().enumerate() {
        if m == 1.0 {
            for c in 0..3 {
                px[c * size * size + i] = color[c] + rng.uniform_range(-0.05, 0.05);
            }
        }
    }
    let pixels = px.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    LabeledImage {
        pixels: Tensor::new(vec![3, size, size], pixels).expect("pixel shape"),
        label: class,
        mask: Some(Tensor::new(vec![size, size], mask).expect("mask shape")),
    }
}

/// `per_class` images of each of `num_classes` shape classes, class-major
/// order. Each image is a textured background with one coloured shape of
/// random position and scale; its mask is the shape's pixel support.
pub fn generate_shapes(num_classes: usize, per_class: usize, size: usize, rng: &mut RandomStream) -> Result<Dataset> {
    if num_classes == 0 || num_classes > SHAPE_NAMES.len() {
        return Err(Error::invalid(format!("num_classes must be 1..=10, got {num_classes}")));
    }
    if size < 8 || size % 4 != 0 {
        return Err(Error::invalid(format!("image size must be a multiple of 4 and at least 8, got {size}")));
    }
    let mut items = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        for i in 0..per_class {
            let mut r = rng.split_indexed(SHAPE_NAMES[class], i as u64);
            items.push(render(class, size, &mut r));
        }
    }
    Dataset::new(num_classes, items)
}
