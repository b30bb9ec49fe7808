use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtcError};
use crate::geometry::BoundingBox;
use crate::raster::{clamp_taps, Raster};
use crate::rng::rng_for;

/// Channel-major feature map in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_raster(r: &Raster) -> Self {
        let (w, h, ch) = (r.width(), r.height(), r.channels());
        let mut m = Self::zeros(ch, h, w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    m.data[(c * h + y) * w + x] = r.get(x, y, c) as f64;
                }
            }
        }
        m
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

fn taps(lo: f64, len: f64, n: usize, size: usize) -> Vec<(usize, usize, f64)> {
    let step = len / n as f64;
    (0..n).map(|u| clamp_taps(lo + (u as f64 + 0.5) * step - 0.5, size)).collect()
}

/// Bilinear resample of `fmap` under `b` onto an `out_w x out_h` grid. Grid
/// points sit at the centers of an even partition of the box, the same
/// convention as [`crop_resize`](super::crop_resize), so a box covering the
/// whole map at its own size is the identity and the grid scales exactly with
/// the box.
pub fn grid_sample_features(fmap: &FeatureMap, b: &BoundingBox, out_w: usize, out_h: usize) -> FeatureMap {
    let xs = taps(b.left(), b.w, out_w, fmap.width);
    let ys = taps(b.top(), b.h, out_h, fmap.height);
    let mut out = FeatureMap::zeros(fmap.channels, out_h, out_w);
    for c in 0..fmap.channels {
        let src = fmap.plane(c);
        let dst = out.plane_mut(c);
        for (v, &(y0, y1, fy)) in ys.iter().enumerate() {
            let r0 = &src[y0 * fmap.width..(y0 + 1) * fmap.width];
            let r1 = &src[y1 * fmap.width..(y1 + 1) * fmap.width];
            for (u, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                dst[v * out_w + u] = top + (bot - top) * fy;
            }
        }
    }
    out
}

/// Adjoint of [`grid_sample_features`]: accumulates `grad` into `into`.
pub fn grid_sample_backward(into: &mut FeatureMap, b: &BoundingBox, grad: &FeatureMap) {
    let (out_w, out_h) = (grad.width, grad.height);
    let xs = taps(b.left(), b.w, out_w, into.width);
    let ys = taps(b.top(), b.h, out_h, into.height);
    let w = into.width;
    for c in 0..into.channels {
        let g = grad.plane(c);
        let dst = into.plane_mut(c);
        for (v, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (u, &(x0, x1, fx)) in xs.iter().enumerate() {
                let gv = g[v * out_w + u];
                if gv == 0.0 {
                    continue;
                }
                let top = gv * (1.0 - fy);
                let bot = gv * fy;
                dst[y0 * w + x0] += top * (1.0 - fx);
                dst[y0 * w + x1] += top * fx;
                dst[y1 * w + x0] += bot * (1.0 - fx);
                dst[y1 * w + x1] += bot * fx;
            }
        }
    }
}

const NORM_FLOOR: f64 = 1e-12;

/// Per-position cosine of the channel vectors. Positions where either vector
/// is zero score 0.
pub fn cosine_similarity_map(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if !a.same_shape(b) {
        return Err(TtcError::Shape(format!(
            "cosine map needs equal shapes, got {}x{}x{} and {}x{}x{}",
            a.channels, a.height, a.width, b.channels, b.height, b.width
        )));
    }
    let n = a.height * a.width;
    let mut out = FeatureMap::zeros(1, a.height, a.width);
    let (mut dot, mut na, mut nb) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for c in 0..a.channels {
        for ((i, &x), &y) in a.plane(c).iter().enumerate().zip(b.plane(c)) {
            dot[i] += x * y;
            na[i] += x * x;
            nb[i] += y * y;
        }
    }
    for i in 0..n {
        let den = na[i].sqrt() * nb[i].sqrt();
        out.data[i] = if na[i].sqrt() > NORM_FLOOR && nb[i].sqrt() > NORM_FLOOR { dot[i] / den } else { 0.0 };
    }
    Ok(out)
}

/// Gradients of `sum(grad * cos(a, b))` with respect to `a` and `b`.
pub fn cosine_similarity_map_backward(
    a: &FeatureMap,
    b: &FeatureMap,
    grad: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap)> {
    if !a.same_shape(b) || grad.height != a.height || grad.width != a.width {
        return Err(TtcError::Shape("cosine backward shape mismatch".into()));
    }
    let n = a.height * a.width;
    let (mut dot, mut na, mut nb) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for c in 0..a.channels {
        for ((i, &x), &y) in a.plane(c).iter().enumerate().zip(b.plane(c)) {
            dot[i] += x * y;
            na[i] += x * x;
            nb[i] += y * y;
        }
    }
    let mut ga = FeatureMap::zeros(a.channels, a.height, a.width);
    let mut gb = FeatureMap::zeros(a.channels, a.height, a.width);
    // d cos / d a = b / (|a||b|) - cos a / |a|^2
    let mut ka = vec![0.0; n];
    let mut kb = vec![0.0; n];
    let mut kc = vec![0.0; n];
    let mut kd = vec![0.0; n];
    for i in 0..n {
        let (la, lb) = (na[i].sqrt(), nb[i].sqrt());
        if la > NORM_FLOOR && lb > NORM_FLOOR {
            let g = grad.data[i];
            let cos = dot[i] / (la * lb);
            ka[i] = g / (la * lb);
            kb[i] = g * cos / na[i];
            kc[i] = g / (la * lb);
            kd[i] = g * cos / nb[i];
        }
    }
    for c in 0..a.channels {
        let (pa, pb) = (a.plane(c), b.plane(c));
        let da = ga.plane_mut(c);
        for i in 0..n {
            da[i] = ka[i] * pb[i] - kb[i] * pa[i];
        }
        let db = gb.plane_mut(c);
        for i in 0..n {
            db[i] = kc[i] * pa[i] - kd[i] * pb[i];
        }
    }
    Ok((ga, gb))
}

/// Maps an image to a feature map of the same spatial size.
pub trait FeatureExtractor {
    fn channels(&self) -> usize;
    fn extract(&self, image: &Raster) -> FeatureMap;
    /// Number of trainable parameters.
    fn num_params(&self) -> usize {
        0
    }
}

/// Raw pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Identity;

impl FeatureExtractor for Identity {
    fn channels(&self) -> usize {
        3
    }

    fn extract(&self, image: &Raster) -> FeatureMap {
        FeatureMap::from_raster(image)
    }
}

/// Twelve fixed channels: for each of gray, red-green and blue-yellow, the
/// mean-removed value, horizontal and vertical central differences and the
/// difference to the 5x5 local mean.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HandCrafted;

pub const HAND_CRAFTED_CHANNELS: usize = 12;

fn box_mean(plane: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    // summed-area table with clamped borders
    let mut sat = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += plane[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
            out[y * w + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

impl FeatureExtractor for HandCrafted {
    fn channels(&self) -> usize {
        HAND_CRAFTED_CHANNELS
    }

    fn extract(&self, image: &Raster) -> FeatureMap {
        let (w, h) = (image.width(), image.height());
        let px = |x: usize, y: usize, c: usize| image.get(x, y, c.min(image.channels() - 1)) as f64;
        let mut planes = vec![vec![0.0; w * h]; 3];
        for y in 0..h {
            for x in 0..w {
                let (r, g, b) = (px(x, y, 0), px(x, y, 1), px(x, y, 2));
                let i = y * w + x;
                planes[0][i] = (r + g + b) / 3.0;
                planes[1][i] = r - g;
                planes[2][i] = b - 0.5 * (r + g);
            }
        }
        let mut out = FeatureMap::zeros(HAND_CRAFTED_CHANNELS, h, w);
        for (p, plane) in planes.iter().enumerate() {
            let mean = plane.iter().sum::<f64>() / (w * h).max(1) as f64;
            let local = box_mean(plane, w, h, 2);
            let base = 4 * p;
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let l = plane[y * w + x.saturating_sub(1)];
                    let r = plane[y * w + (x + 1).min(w - 1)];
                    let u = plane[y.saturating_sub(1) * w + x];
                    let d = plane[(y + 1).min(h - 1) * w + x];
                    out.data[base * w * h + i] = plane[i] - mean;
                    out.data[(base + 1) * w * h + i] = 0.5 * (r - l);
                    out.data[(base + 2) * w * h + i] = 0.5 * (d - u);
                    out.data[(base + 3) * w * h + i] = plane[i] - local[i];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStackSpec {
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Default for ConvStackSpec {
    fn default() -> Self {
        Self { in_channels: HAND_CRAFTED_CHANNELS, hidden: 8, out_channels: HAND_CRAFTED_CHANNELS, kernel: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Conv {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    transposed: bool,
    /// `[cout][cin][k][k]` for plain convolutions, `[cin][cout][k][k]` for transposed ones.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Conv {
    fn pad(&self) -> usize {
        self.k / 2
    }

    fn out_size(&self, h: usize, target: usize) -> usize {
        if self.transposed {
            target
        } else {
            (h + 2 * self.pad() - self.k) / self.stride + 1
        }
    }

    fn widx(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        let k2 = self.k * self.k;
        if self.transposed {
            (ci * self.cout + co) * k2 + ky * self.k + kx
        } else {
            (co * self.cin + ci) * k2 + ky * self.k + kx
        }
    }

    /// Visits every (output position, input position, weight) triple.
    #[inline]
    fn for_each_tap(&self, ih: usize, iw: usize, oh: usize, ow: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let p = self.pad() as isize;
        let s = self.stride as isize;
        let k = self.k;
        if self.transposed {
            for iy in 0..ih {
                for ix in 0..iw {
                    for ky in 0..k {
                        let oy = iy as isize * s - p + ky as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ox = ix as isize * s - p + kx as isize;
                            if ox < 0 || ox >= ow as isize {
                                continue;
                            }
                            f(oy as usize * ow + ox as usize, iy * iw + ix, ky, kx);
                        }
                    }
                }
            }
        } else {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..k {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            f(oy * ow + ox, iy as usize * iw + ix as usize, ky, kx);
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, input: &FeatureMap, target_h: usize, target_w: usize) -> FeatureMap {
        let oh = self.out_size(input.height, target_h);
        let ow = self.out_size(input.width, target_w);
        let mut out = FeatureMap::zeros(self.cout, oh, ow);
        let (ih, iw) = (input.height, input.width);
        for co in 0..self.cout {
            let bias = self.b[co];
            out.plane_mut(co).iter_mut().for_each(|v| *v = bias);
        }
        let mut acc = vec![0.0; oh * ow];
        for co in 0..self.cout {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for ci in 0..self.cin {
                let src = input.plane(ci);
                self.for_each_tap(ih, iw, oh, ow, |o, i, ky, kx| {
                    acc[o] += self.w[self.widx(co, ci, ky, kx)] * src[i];
                });
            }
            for (d, a) in out.plane_mut(co).iter_mut().zip(&acc) {
                *d += a;
            }
        }
        out
    }

    /// Returns the input gradient and accumulates weight and bias gradients.
    fn backward(&self, input: &FeatureMap, grad_out: &FeatureMap, gw: &mut [f64], gb: &mut [f64]) -> FeatureMap {
        let (ih, iw, oh, ow) = (input.height, input.width, grad_out.height, grad_out.width);
        let mut gin = FeatureMap::zeros(self.cin, ih, iw);
        for co in 0..self.cout {
            let g = grad_out.plane(co);
            gb[co] += g.iter().sum::<f64>();
            for ci in 0..self.cin {
                let src = input.plane(ci);
                let mut dsrc = vec![0.0; ih * iw];
                self.for_each_tap(ih, iw, oh, ow, |o, i, ky, kx| {
                    let wi = self.widx(co, ci, ky, kx);
                    gw[wi] += g[o] * src[i];
                    dsrc[i] += g[o] * self.w[wi];
                });
                for (d, s) in gin.plane_mut(ci).iter_mut().zip(&dsrc) {
                    *d += s;
                }
            }
        }
        gin
    }

    fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Trainable stack on top of the hand-crafted channels: a stride-2
/// convolution, a stride-2 transposed convolution back to full resolution and
/// two stride-1 convolutions, SiLU between layers. Output size equals input size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub spec: ConvStackSpec,
    layers: Vec<Conv>,
}

/// Intermediate activations kept for the backward pass.
pub struct ConvTape {
    input: FeatureMap,
    pre: Vec<FeatureMap>,
    post: Vec<FeatureMap>,
}

impl ConvStack {
    pub fn new(spec: ConvStackSpec, seed: u64) -> Result<Self> {
        if spec.kernel % 2 == 0 || spec.kernel == 0 || spec.hidden == 0 || spec.out_channels == 0 {
            return Err(TtcError::Config("conv stack needs an odd kernel and positive widths".into()));
        }
        let (i, hdn, o, k) = (spec.in_channels, spec.hidden, spec.out_channels, spec.kernel);
        let shapes = [(i, hdn, 2, false), (hdn, hdn, 2, true), (hdn, hdn, 1, false), (hdn, o, 1, false)];
        let mut rng = rng_for(seed, 0xc0);
        let layers = shapes
            .iter()
            .map(|&(cin, cout, stride, transposed)| {
                let fan_in = (cin * k * k) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                Conv {
                    cin,
                    cout,
                    k,
                    stride,
                    transposed,
                    w: (0..cin * cout * k * k).map(|_| normal.sample(&mut rng)).collect(),
                    b: vec![0.0; cout],
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Names and shapes of the parameter tensors, in [`params`](Self::params) order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let (a, b) = if l.transposed { (l.cin, l.cout) } else { (l.cout, l.cin) };
            out.push((format!("conv{i}.weight"), vec![a, b, l.k, l.k]));
            out.push((format!("conv{i}.bias"), vec![l.cout]));
        }
        out
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.w);
            p.extend_from_slice(&l.b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(TtcError::Shape(format!("conv stack has {} params, got {}", self.num_params(), p.len())));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Forward pass from an already hand-crafted input.
    pub fn forward_tape(&self, input: FeatureMap) -> (FeatureMap, ConvTape) {
        let (h, w) = (input.height, input.width);
        let mut pre = Vec::with_capacity(4);
        let mut post = Vec::with_capacity(4);
        let mut x = input.clone();
        for (li, l) in self.layers.iter().enumerate() {
            let z = l.forward(&x, h, w);
            let a = if li + 1 < self.layers.len() {
                FeatureMap { data: z.data.iter().map(|&v| silu(v)).collect(), ..z.clone() }
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a.clone());
            x = a;
        }
        (x, ConvTape { input, pre, post })
    }

    /// Parameter gradient for an output gradient, in [`params`](Self::params) order.
    pub fn backward(&self, tape: &ConvTape, grad_out: &FeatureMap) -> Vec<f64> {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> =
            self.layers.iter().map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()])).collect();
        let mut g = grad_out.clone();
        for li in (0..self.layers.len()).rev() {
            if li + 1 < self.layers.len() {
                for (gv, &z) in g.data.iter_mut().zip(&tape.pre[li].data) {
                    *gv *= silu_grad(z);
                }
            }
            let input = if li == 0 { &tape.input } else { &tape.post[li - 1] };
            let (gw, gb) = &mut grads[li];
            g = self.layers[li].backward(input, &g, gw, gb);
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        flat
    }

    fn hand_crafted_input(&self, image: &Raster) -> FeatureMap {
        let base = HandCrafted.extract(image);
        if base.channels == self.spec.in_channels {
            return base;
        }
        // fewer input channels: keep the leading ones
        let n = base.height * base.width;
        let mut m = FeatureMap::zeros(self.spec.in_channels, base.height, base.width);
        let keep = self.spec.in_channels.min(base.channels);
        m.data[..keep * n].copy_from_slice(&base.data[..keep * n]);
        m
    }

    pub fn extract_tape(&self, image: &Raster) -> (FeatureMap, ConvTape) {
        self.forward_tape(self.hand_crafted_input(image))
    }
}

impl FeatureExtractor for ConvStack {
    fn channels(&self) -> usize {
        self.spec.out_channels
    }

    fn extract(&self, image: &Raster) -> FeatureMap {
        self.extract_tape(image).0
    }

    fn num_params(&self) -> usize {
        self.layers.iter().map(Conv::num_params).sum()
    }
}

/// Concrete extractor choice, serializable by name.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtractorKind {
    Identity,
    HandCrafted,
    ConvStack(ConvStack),
}

impl ExtractorKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExtractorKind::Identity => "identity",
            ExtractorKind::HandCrafted => "hand_crafted",
            ExtractorKind::ConvStack(_) => "conv_stack",
        }
    }
}

impl Default for ExtractorKind {
    fn default() -> Self {
        ExtractorKind::HandCrafted
    }
}

impl FeatureExtractor for ExtractorKind {
    fn channels(&self) -> usize {
        match self {
            ExtractorKind::Identity => Identity.channels(),
            ExtractorKind::HandCrafted => HandCrafted.channels(),
            ExtractorKind::ConvStack(c) => c.channels(),
        }
    }

    fn extract(&self, image: &Raster) -> FeatureMap {
        match self {
            ExtractorKind::Identity => Identity.extract(image),
            ExtractorKind::HandCrafted => HandCrafted.extract(image),
            ExtractorKind::ConvStack(c) => c.extract(image),
        }
    }

    fn num_params(&self) -> usize {
        match self {
            ExtractorKind::ConvStack(c) => c.num_params(),
            _ => 0,
        }
    }
}
