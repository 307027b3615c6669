use crate::error::{Error, Result};
use crate::model::real::{gemm, Mat, Real};
use crate::numerics::{RandomStream, Tensor};

/// Parameter tensors in storage order.
pub const PARAM_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "fc.weight",
    "fc.bias",
];

/// `(in, out)` channels of the three 3×3 convolutions.
const CONV_CHANNELS: [(usize, usize); 3] = [(3, 16), (16, 32), (32, 64)];

/// Channels of the last conv feature map (the saliency source).
pub const FEATURE_CHANNELS: usize = 64;
pub const INPUT_CHANNELS: usize = 3;

/// Subtracted from every pixel before the first convolution so `[0,1]`
/// inputs are centred.
pub const INPUT_SHIFT: f64 = 0.5;

/// Centring (`x − 0.5`), conv(3→16)+ReLU, maxpool2, conv(16→32)+ReLU, maxpool2, conv(32→64)+ReLU,
/// global average pool, linear(64→classes). All convs are 3×3, stride 1,
/// zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<R> {
    num_classes: usize,
    params: [Vec<R>; 8],
}

/// The `f32` network used for training.
pub type TinyCnn = Network<f32>;

/// One gradient buffer per parameter tensor, same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<R> {
    pub tensors: [Vec<R>; 8],
}

impl<R: Real> Gradients<R> {
    pub fn zeros_like(net: &Network<R>) -> Self {
        Self {
            tensors: std::array::from_fn(|i| vec![R::zero(); net.params[i].len()]),
        }
    }

    /// `self ← self + c·other`.
    pub fn add_scaled(&mut self, other: &Gradients<R>, c: R) {
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += c * s;
            }
        }
    }

    pub fn scale(&mut self, c: R) {
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                *v = *v * c;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `N×classes`.
    pub logits: Tensor,
    /// Post-ReLU last conv map, `N×64×(H/4)×(W/4)`.
    pub features: Tensor,
}

/// Loss, parameter gradients, and the forward outputs they came from.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub loss: f32,
    pub grads: Gradients<f32>,
    pub output: ForwardOutput,
}

struct ConvTrace<R> {
    cols: Vec<R>,
    /// Post-ReLU output, channel-major `C×N×H×W`.
    act: Vec<R>,
}

struct PoolTrace {
    argmax: Vec<u32>,
}

/// Everything the backward pass needs. Activations are channel-major
/// (`C×N×H×W`) so each conv is a single GEMM over the batch.
pub(crate) struct Trace<R> {
    n: usize,
    h: usize,
    w: usize,
    convs: [ConvTrace<R>; 3],
    pools: [PoolTrace; 2],
    /// `64×N` pooled features.
    gap: Vec<R>,
    /// `classes×N`.
    logits_t: Vec<R>,
}

impl<R: Real> Network<R> {
    pub fn shapes(num_classes: usize) -> [Vec<usize>; 8] {
        let [(i1, o1), (i2, o2), (i3, o3)] = CONV_CHANNELS;
        [
            vec![o1, i1, 3, 3],
            vec![o1],
            vec![o2, i2, 3, 3],
            vec![o2],
            vec![o3, i3, 3, 3],
            vec![o3],
            vec![num_classes, FEATURE_CHANNELS],
            vec![num_classes],
        ]
    }

    /// Kaiming fan-in initialization (`√(2/fan_in)` for convs, `√(1/fan_in)`
    /// for the linear head); biases start at zero.
    pub fn new(num_classes: usize, rng: &mut RandomStream) -> Self {
        let shapes = Self::shapes(num_classes);
        let params = std::array::from_fn(|i| {
            let shape = &shapes[i];
            let len: usize = shape.iter().product();
            if shape.len() == 1 {
                return vec![R::zero(); len];
            }
            let fan_in: usize = shape[1..].iter().product();
            let gain = if i == 6 { 1.0 } else { 2.0 };
            let std = (gain / fan_in as f64).sqrt();
            (0..len).map(|_| R::from_f64(std * rng.normal())).collect()
        });
        Self {
            num_classes,
            params,
        }
    }

    pub fn zeros(num_classes: usize) -> Self {
        let shapes = Self::shapes(num_classes);
        Self {
            num_classes,
            params: std::array::from_fn(|i| vec![R::zero(); shapes[i].iter().product()]),
        }
    }

    pub fn from_params(num_classes: usize, params: [Vec<R>; 8]) -> Result<Self> {
        let shapes = Self::shapes(num_classes);
        for (i, (p, s)) in params.iter().zip(&shapes).enumerate() {
            if p.len() != s.iter().product::<usize>() {
                return Err(Error::invalid(format!(
                    "{} has {} values, expected shape {s:?}",
                    PARAM_NAMES[i],
                    p.len()
                )));
            }
        }
        Ok(Self {
            num_classes,
            params,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[Vec<R>; 8] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<R>; 8] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn cast<S: Real>(&self) -> Network<S> {
        Network {
            num_classes: self.num_classes,
            params: std::array::from_fn(|i| {
                self.params[i].iter().map(|v| S::from_f64(v.as_f64())).collect()
            }),
        }
    }

    /// Classifier weights of one class (the CAM weights).
    pub fn class_weights(&self, class: usize) -> &[R] {
        &self.params[6][class * FEATURE_CHANNELS..(class + 1) * FEATURE_CHANNELS]
    }

    pub(crate) fn check_input(shape: &[usize]) -> Result<(usize, usize, usize)> {
        match *shape {
            [n, INPUT_CHANNELS, h, w] if n > 0 && h > 0 && w > 0 && h % 4 == 0 && w % 4 == 0 => {
                Ok((n, h, w))
            }
            _ => Err(Error::invalid(format!(
                "network input must be N×3×H×W with H, W positive multiples of 4, got {shape:?}"
            ))),
        }
    }

    /// Forward pass over a sample-major `N×3×H×W` buffer.
    pub(crate) fn trace(&self, x: &[R], n: usize, h: usize, w: usize) -> Trace<R> {
        self.trace_gated(x, n, h, w, None)
    }

    /// Forward pass; with `frozen`, ReLU gates and pool selections are taken
    /// from `frozen` instead of being recomputed.
    pub(crate) fn trace_gated(&self, x: &[R], n: usize, h: usize, w: usize, frozen: Option<&Gates>) -> Trace<R> {
        let mut input = to_channel_major(x, n, INPUT_CHANNELS, h * w);
        let shift = R::from_f64(INPUT_SHIFT);
        for v in input.iter_mut() {
            *v = *v - shift;
        }
        let (mut ch, mut cw) = (h, w);
        let mut convs: Vec<ConvTrace<R>> = Vec::with_capacity(3);
        let mut pools = Vec::with_capacity(2);
        for (layer, &(c_in, c_out)) in CONV_CHANNELS.iter().enumerate() {
            let cols = im2col(&input, c_in, n, ch, cw);
            let nhw = n * ch * cw;
            let mut act = vec![R::zero(); c_out * nhw];
            gemm(
                R::one(),
                Mat::new(&self.params[2 * layer], c_out, c_in * 9),
                Mat::new(&cols, c_in * 9, nhw),
                R::zero(),
                &mut act,
            );
            for (co, (row, &b)) in act.chunks_exact_mut(nhw).zip(&self.params[2 * layer + 1]).enumerate() {
                for (i, v) in row.iter_mut().enumerate() {
                    let z = *v + b;
                    let on = match frozen {
                        Some(g) => g.relu[layer][co * nhw + i],
                        None => z > R::zero(),
                    };
                    *v = if on { z } else { R::zero() };
                }
            }
            if layer < 2 {
                let (pooled, argmax) = match frozen {
                    Some(g) => {
                        let idx = &g.argmax[layer];
                        let (in_plane, out_plane) = (ch * cw, (ch / 2) * (cw / 2));
                        let pooled = idx
                            .iter()
                            .enumerate()
                            .map(|(o, &a)| act[(o / out_plane) * in_plane + a as usize])
                            .collect();
                        (pooled, idx.clone())
                    }
                    None => maxpool2(&act, c_out * n, ch, cw),
                };
                input = pooled;
                pools.push(PoolTrace { argmax });
                ch /= 2;
                cw /= 2;
            }
            convs.push(ConvTrace { cols, act });
        }
        let a3 = &convs[2].act;
        let plane = ch * cw;
        let inv = R::from_f64(1.0 / plane as f64);
        let gap: Vec<R> = a3
            .chunks_exact(plane)
            .map(|p| p.iter().fold(R::zero(), |acc, &v| acc + v) * inv)
            .collect();
        let k = self.num_classes;
        let mut logits_t = vec![R::zero(); k * n];
        gemm(
            R::one(),
            Mat::new(&self.params[6], k, FEATURE_CHANNELS),
            Mat::new(&gap, FEATURE_CHANNELS, n),
            R::zero(),
            &mut logits_t,
        );
        for (row, &b) in logits_t.chunks_exact_mut(n).zip(&self.params[7]) {
            for v in row.iter_mut() {
                *v += b;
            }
        }
        let mut convs = convs.into_iter();
        let mut pools = pools.into_iter();
        Trace {
            n,
            h,
            w,
            convs: std::array::from_fn(|_| convs.next().expect("three convs")),
            pools: std::array::from_fn(|_| pools.next().expect("two pools")),
            gap,
            logits_t,
        }
    }

    /// Parameter gradients given `∂L/∂logits` laid out `classes×N`.
    pub(crate) fn backward(&self, trace: &Trace<R>, dlogits_t: &[R]) -> Gradients<R> {
        let n = trace.n;
        let k = self.num_classes;
        let mut grads = Gradients::zeros_like(self);

        gemm(
            R::one(),
            Mat::new(dlogits_t, k, n),
            Mat::new(&trace.gap, FEATURE_CHANNELS, n).t(),
            R::zero(),
            &mut grads.tensors[6],
        );
        for (g, row) in grads.tensors[7].iter_mut().zip(dlogits_t.chunks_exact(n)) {
            *g = row.iter().fold(R::zero(), |acc, &v| acc + v);
        }
        let mut dgap = vec![R::zero(); FEATURE_CHANNELS * n];
        gemm(
            R::one(),
            Mat::new(&self.params[6], k, FEATURE_CHANNELS).t(),
            Mat::new(dlogits_t, k, n),
            R::zero(),
            &mut dgap,
        );

        let (h3, w3) = (trace.h / 4, trace.w / 4);
        let plane = h3 * w3;
        let inv = R::from_f64(1.0 / plane as f64);
        let mut dz: Vec<R> = Vec::with_capacity(FEATURE_CHANNELS * n * plane);
        for (p, &g) in trace.convs[2].act.chunks_exact(plane).zip(&dgap) {
            dz.extend(p.iter().map(|&a| if a > R::zero() { g * inv } else { R::zero() }));
        }

        let dims = [(trace.h, trace.w), (trace.h / 2, trace.w / 2), (h3, w3)];
        for layer in (0..3).rev() {
            let (c_in, c_out) = CONV_CHANNELS[layer];
            let (ch, cw) = dims[layer];
            let nhw = n * ch * cw;
            let conv = &trace.convs[layer];
            let (wg, rest) = grads.tensors[2 * layer..].split_at_mut(1);
            gemm(
                R::one(),
                Mat::new(&dz, c_out, nhw),
                Mat::new(&conv.cols, c_in * 9, nhw).t(),
                R::zero(),
                &mut wg[0],
            );
            for (g, row) in rest[0].iter_mut().zip(dz.chunks_exact(nhw)) {
                *g = row.iter().fold(R::zero(), |acc, &v| acc + v);
            }
            if layer == 0 {
                break;
            }
            let mut dcols = vec![R::zero(); c_in * 9 * nhw];
            gemm(
                R::one(),
                Mat::new(&self.params[2 * layer], c_out, c_in * 9).t(),
                Mat::new(&dz, c_out, nhw),
                R::zero(),
                &mut dcols,
            );
            let dpooled = col2im(&dcols, c_in, n, ch, cw);
            // Unpool onto the previous conv's output, then gate by its ReLU.
            let (ph, pw) = dims[layer - 1];
            let prev = &trace.convs[layer - 1].act;
            let mut dprev = vec![R::zero(); prev.len()];
            let argmax = &trace.pools[layer - 1].argmax;
            let (in_plane, out_plane) = (ph * pw, ch * cw);
            for (p, (dsrc, idx)) in dpooled
                .chunks_exact(out_plane)
                .zip(argmax.chunks_exact(out_plane))
                .enumerate()
            {
                let base = p * in_plane;
                for (&d, &i) in dsrc.iter().zip(idx) {
                    dprev[base + i as usize] += d;
                }
            }
            for (d, &a) in dprev.iter_mut().zip(prev) {
                if a <= R::zero() {
                    *d = R::zero();
                }
            }
            dz = dprev;
        }
        grads
    }

    /// Loss with gates frozen (see [`Network::trace_gated`]).
    pub(crate) fn loss_gated(&self, x: &[R], n: usize, h: usize, w: usize, targets: &[R], gates: &Gates) -> (R, Gates) {
        let trace = self.trace_gated(x, n, h, w, Some(gates));
        let loss = soft_cross_entropy(&trace.logits_t, targets, self.num_classes, n).0;
        let free = self.trace(x, n, h, w).gates();
        (loss, free)
    }

    /// Mean soft-target cross-entropy and its gradient for a raw buffer.
    pub(crate) fn loss_raw(&self, x: &[R], n: usize, h: usize, w: usize, targets: &[R]) -> (R, Trace<R>, Vec<R>) {
        let trace = self.trace(x, n, h, w);
        let (loss, dl) = soft_cross_entropy(&trace.logits_t, targets, self.num_classes, n);
        (loss, trace, dl)
    }

    pub(crate) fn loss_and_grads_raw(
        &self,
        x: &[R],
        n: usize,
        h: usize,
        w: usize,
        targets: &[R],
    ) -> (R, Gradients<R>) {
        let (loss, trace, dl) = self.loss_raw(x, n, h, w, targets);
        (loss, self.backward(&trace, &dl))
    }
}

/// The piecewise-linear choices of a forward pass: which ReLUs fired and
/// which element each pool window selected.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Gates {
    relu: [Vec<bool>; 3],
    argmax: [Vec<u32>; 2],
}

impl<R: Real> Trace<R> {
    pub(crate) fn gates(&self) -> Gates {
        Gates {
            relu: std::array::from_fn(|l| self.convs[l].act.iter().map(|&a| a > R::zero()).collect()),
            argmax: std::array::from_fn(|l| self.pools[l].argmax.clone()),
        }
    }

    pub(crate) fn logits_nk(&self) -> Vec<R> {
        let k = self.logits_t.len() / self.n;
        let mut out = vec![R::zero(); self.n * k];
        for c in 0..k {
            for i in 0..self.n {
                out[i * k + c] = self.logits_t[c * self.n + i];
            }
        }
        out
    }

    pub(crate) fn features_nchw(&self) -> Vec<R> {
        let plane = (self.h / 4) * (self.w / 4);
        to_sample_major(&self.convs[2].act, self.n, FEATURE_CHANNELS, plane)
    }
}

impl TinyCnn {
    pub fn forward(&self, x: &Tensor) -> Result<ForwardOutput> {
        let (n, h, w) = Self::check_input(x.shape())?;
        let trace = self.trace(x.data(), n, h, w);
        Ok(output_of(&trace, self.num_classes))
    }

    /// Mean soft-target cross-entropy `−Σ y·log softmax(z)` over the batch,
    /// with gradients for every parameter.
    pub fn loss_and_backward(&self, x: &Tensor, targets: &Tensor) -> Result<Backprop> {
        let (n, h, w) = Self::check_input(x.shape())?;
        if targets.shape() != [n, self.num_classes] {
            return Err(Error::ShapeMismatch {
                expected: vec![n, self.num_classes],
                actual: targets.shape().to_vec(),
            });
        }
        let (loss, trace, dl) = self.loss_raw(x.data(), n, h, w, targets.data());
        let grads = self.backward(&trace, &dl);
        Ok(Backprop {
            loss,
            grads,
            output: output_of(&trace, self.num_classes),
        })
    }
}

fn output_of(trace: &Trace<f32>, k: usize) -> ForwardOutput {
    let (n, h3, w3) = (trace.n, trace.h / 4, trace.w / 4);
    ForwardOutput {
        logits: Tensor::new(vec![n, k], trace.logits_nk()).expect("logits shape"),
        features: Tensor::new(vec![n, FEATURE_CHANNELS, h3, w3], trace.features_nchw())
            .expect("feature shape"),
    }
}

/// Mean over the batch of `−Σ_c y_c log softmax(z)_c`; returns the loss and
/// `∂L/∂z` (both `classes×N`).
pub(crate) fn soft_cross_entropy<R: Real>(logits_t: &[R], targets_nk: &[R], k: usize, n: usize) -> (R, Vec<R>) {
    let mut dl = vec![R::zero(); k * n];
    let mut total = 0.0f64;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let z = |c: usize| logits_t[c * n + i].as_f64();
        let max = (0..k).map(z).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..k).map(|c| (z(c) - max).exp()).sum();
        let lse = max + sum.ln();
        let t_sum: f64 = (0..k).map(|c| targets_nk[i * k + c].as_f64()).sum();
        for c in 0..k {
            let t = targets_nk[i * k + c].as_f64();
            if t != 0.0 {
                total -= t * (z(c) - lse);
            }
            let p = (z(c) - lse).exp();
            dl[c * n + i] = R::from_f64((p * t_sum - t) * inv_n);
        }
    }
    (R::from_f64(total * inv_n), dl)
}

fn to_channel_major<R: Copy>(x: &[R], n: usize, c: usize, plane: usize) -> Vec<R> {
    let mut out = Vec::with_capacity(x.len());
    for ci in 0..c {
        for ni in 0..n {
            out.extend_from_slice(&x[(ni * c + ci) * plane..][..plane]);
        }
    }
    out
}

fn to_sample_major<R: Copy>(x: &[R], n: usize, c: usize, plane: usize) -> Vec<R> {
    let mut out = Vec::with_capacity(x.len());
    for ni in 0..n {
        for ci in 0..c {
            out.extend_from_slice(&x[(ci * n + ni) * plane..][..plane]);
        }
    }
    out
}

/// 3×3 pad-1 patches of a `C×N×H×W` buffer as a `(C·9)×(N·H·W)` matrix.
fn im2col<R: Real>(input: &[R], c: usize, n: usize, h: usize, w: usize) -> Vec<R> {
    let plane = h * w;
    let ncols = n * plane;
    let mut cols = vec![R::zero(); c * 9 * ncols];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * ncols..][..ncols];
                for ni in 0..n {
                    let src = &input[(ci * n + ni) * plane..][..plane];
                    let dst = &mut row[ni * plane..][..plane];
                    for y in 0..h {
                        let sy = y + ky;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let s = &src[(sy - 1) * w..][..w];
                        let d = &mut dst[y * w..][..w];
                        match kx {
                            0 => d[1..].copy_from_slice(&s[..w - 1]),
                            1 => d.copy_from_slice(s),
                            _ => d[..w - 1].copy_from_slice(&s[1..]),
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im<R: Real>(cols: &[R], c: usize, n: usize, h: usize, w: usize) -> Vec<R> {
    let plane = h * w;
    let ncols = n * plane;
    let mut out = vec![R::zero(); c * ncols];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * ncols..][..ncols];
                for ni in 0..n {
                    let src = &row[ni * plane..][..plane];
                    let dst = &mut out[(ci * n + ni) * plane..][..plane];
                    for y in 0..h {
                        let sy = y + ky;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let s = &src[y * w..][..w];
                        let d = &mut dst[(sy - 1) * w..][..w];
                        match kx {
                            0 => d[..w - 1].iter_mut().zip(&s[1..]).for_each(|(a, &b)| *a += b),
                            1 => d.iter_mut().zip(s).for_each(|(a, &b)| *a += b),
                            _ => d[1..].iter_mut().zip(&s[..w - 1]).for_each(|(a, &b)| *a += b),
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2×2 stride-2 max pool over `planes` planes of `h×w`; ties keep the first
/// element in row-major order.
fn maxpool2<R: Real>(input: &[R], planes: usize, h: usize, w: usize) -> (Vec<R>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &input[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * w + 2 * ox;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                argmax.push(best as u32);
            }
        }
    }
    (out, argmax)
}
