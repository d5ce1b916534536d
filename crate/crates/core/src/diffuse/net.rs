//! Small dilated convolutional noise predictor with hand-written backprop and
//! optional low-rank adapters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::data::{time_embedding, Conditioning, CONDITION_CHANNELS, TIME_EMBED_DIM};
use crate::error::{Error, Result};

pub const HIDDEN_CHANNELS: usize = 16;
pub const DILATIONS: [usize; 4] = [1, 2, 4, 8];
/// Layers whose pre-activations receive the projected time embedding.
pub const TIME_LAYERS: usize = 2;
const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub width: usize,
    pub height: usize,
    pub heads: usize,
    pub hidden: usize,
    pub dilations: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSlot {
    pub cin: usize,
    pub cout: usize,
    pub dilation: usize,
    pub weight: usize,
    pub bias: usize,
}

impl ConvSlot {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * TAPS
    }

    /// Weight viewed as a `cout x (cin * 9)` matrix.
    pub fn fan_in(&self) -> usize {
        self.cin * TAPS
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub convs: Vec<ConvSlot>,
    /// Offsets of the `hidden x TIME_EMBED_DIM` time projections.
    pub time: Vec<usize>,
    pub total: usize,
}

impl Architecture {
    pub fn new(width: usize, height: usize, heads: usize) -> Result<Self> {
        Self::with_shape(width, height, heads, HIDDEN_CHANNELS, DILATIONS.to_vec())
    }

    pub fn with_shape(width: usize, height: usize, heads: usize, hidden: usize, dilations: Vec<usize>) -> Result<Self> {
        if width == 0 || height == 0 || heads == 0 || hidden == 0 {
            return Err(Error::arg("architecture dimensions must be positive"));
        }
        if dilations.len() < TIME_LAYERS + 1 || dilations.contains(&0) {
            return Err(Error::arg(format!("need at least {} layers with positive dilation", TIME_LAYERS + 1)));
        }
        Ok(Architecture { width, height, heads, hidden, dilations })
    }

    pub fn in_channels(&self) -> usize {
        self.heads + CONDITION_CHANNELS
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn layout(&self) -> Layout {
        let mut off = 0;
        let last = self.dilations.len() - 1;
        let mut convs = Vec::with_capacity(self.dilations.len());
        for (l, &dilation) in self.dilations.iter().enumerate() {
            let cin = if l == 0 { self.in_channels() } else { self.hidden };
            let cout = if l == last { self.heads } else { self.hidden };
            let weight = off;
            off += cout * cin * TAPS;
            let bias = off;
            off += cout;
            convs.push(ConvSlot { cin, cout, dilation, weight, bias });
        }
        let mut time = Vec::with_capacity(TIME_LAYERS);
        for _ in 0..TIME_LAYERS {
            time.push(off);
            off += self.hidden * TIME_EMBED_DIM;
        }
        Layout { convs, time, total: off }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Low-rank adapters `W_eff = W + B A` on the hidden convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapters {
    pub rank: usize,
    pub layers: Vec<usize>,
    /// Per adapted layer: `B` (`cout x rank`) then `A` (`rank x fan_in`), row-major.
    pub factors: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdapterSlot {
    pub layer: usize,
    pub b: usize,
    pub a: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Adapters {
    pub fn slots(&self, layout: &Layout) -> Vec<AdapterSlot> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|&layer| {
                let c = layout.convs[layer];
                let (rows, cols) = (c.cout, c.fan_in());
                let b = off;
                let a = b + rows * self.rank;
                off = a + self.rank * cols;
                AdapterSlot { layer, b, a, rows, cols }
            })
            .collect()
    }

    pub fn len_for(layout: &Layout, layers: &[usize], rank: usize) -> usize {
        layers.iter().map(|&l| rank * (layout.convs[l].cout + layout.convs[l].fan_in())).sum()
    }
}

/// Denoiser weights: the base tensor plus optional adapters.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub arch: Architecture,
    pub base: Vec<f64>,
    pub adapters: Option<Adapters>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Per-sample forward activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Cache {
    /// Zero-padded input of each layer.
    padded: Vec<Vec<f64>>,
    /// Pre-activation of each layer (the last one is the output).
    pre: Vec<Vec<f64>>,
    embed: [f64; TIME_EMBED_DIM],
}

fn pad(src: &[f64], channels: usize, w: usize, h: usize, d: usize) -> Vec<f64> {
    let (pw, ph) = (w + 2 * d, h + 2 * d);
    let mut out = vec![0.0; channels * pw * ph];
    for c in 0..channels {
        for y in 0..h {
            let dst = c * pw * ph + (y + d) * pw + d;
            out[dst..dst + w].copy_from_slice(&src[c * w * h + y * w..c * w * h + (y + 1) * w]);
        }
    }
    out
}

impl DenoiserParams {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        DenoiserParams { arch, base: vec![0.0; n], adapters: None }
    }

    /// Scaled Gaussian initialization; the output layer starts small.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let layout = arch.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut base = vec![0.0; layout.total];
        let last = layout.convs.len() - 1;
        for (l, c) in layout.convs.iter().enumerate() {
            let gain = if l == last { 0.1 } else { 1.0 };
            let std = gain * (2.0 / c.fan_in() as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("positive std");
            for v in &mut base[c.weight..c.weight + c.weight_len()] {
                *v = dist.sample(&mut rng);
            }
        }
        let dist = Normal::new(0.0, 0.1 / (TIME_EMBED_DIM as f64).sqrt()).expect("positive std");
        for &off in &layout.time {
            for v in &mut base[off..off + arch.hidden * TIME_EMBED_DIM] {
                *v = dist.sample(&mut rng);
            }
        }
        DenoiserParams { arch, base, adapters: None }
    }

    /// Adds rank-`rank` adapters on every hidden convolution: `B = 0`, `A` Gaussian.
    pub fn with_adapters(mut self, rank: usize, seed: u64) -> Result<Self> {
        let layout = self.arch.layout();
        let layers: Vec<usize> = (0..layout.convs.len() - 1).collect();
        for &l in &layers {
            let c = layout.convs[l];
            if rank == 0 || rank > c.cout.min(c.fan_in()) {
                return Err(Error::arg(format!(
                    "adapter rank {rank} invalid for a {}x{} weight",
                    c.cout,
                    c.fan_in()
                )));
            }
        }
        let mut ad = Adapters { rank, layers, factors: vec![0.0; 0] };
        ad.factors = vec![0.0; Adapters::len_for(&layout, &ad.layers, rank)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in ad.slots(&layout) {
            let dist = Normal::new(0.0, 1.0 / (s.cols as f64).sqrt()).expect("positive std");
            for v in &mut ad.factors[s.a..s.a + rank * s.cols] {
                *v = dist.sample(&mut rng);
            }
        }
        self.adapters = Some(ad);
        Ok(self)
    }

    /// Base weights with every adapter product folded in.
    pub fn effective(&self) -> Vec<f64> {
        let mut w = self.base.clone();
        if let Some(ad) = &self.adapters {
            let layout = self.arch.layout();
            for s in ad.slots(&layout) {
                let off = layout.convs[s.layer].weight;
                for i in 0..s.rows {
                    for k in 0..ad.rank {
                        let b = ad.factors[s.b + i * ad.rank + k];
                        if b == 0.0 {
                            continue;
                        }
                        let arow = &ad.factors[s.a + k * s.cols..s.a + (k + 1) * s.cols];
                        for (dst, a) in w[off + i * s.cols..off + (i + 1) * s.cols].iter_mut().zip(arow) {
                            *dst += b * a;
                        }
                    }
                }
            }
        }
        w
    }

    /// Chain rule from a gradient on the effective weights to the adapter factors.
    pub fn adapter_gradient(&self, grad_eff: &[f64]) -> Option<Vec<f64>> {
        let ad = self.adapters.as_ref()?;
        let layout = self.arch.layout();
        let mut g = vec![0.0; ad.factors.len()];
        let r = ad.rank;
        for s in ad.slots(&layout) {
            let off = layout.convs[s.layer].weight;
            let gw = &grad_eff[off..off + s.rows * s.cols];
            for i in 0..s.rows {
                let grow = &gw[i * s.cols..(i + 1) * s.cols];
                for k in 0..r {
                    let arow = &ad.factors[s.a + k * s.cols..s.a + (k + 1) * s.cols];
                    // dB[i,k] = sum_j dW[i,j] A[k,j]
                    g[s.b + i * r + k] += grow.iter().zip(arow).map(|(x, y)| x * y).sum::<f64>();
                    // dA[k,j] += B[i,k] dW[i,j]
                    let b = ad.factors[s.b + i * r + k];
                    if b != 0.0 {
                        for (dst, x) in g[s.a + k * s.cols..s.a + (k + 1) * s.cols].iter_mut().zip(grow) {
                            *dst += b * x;
                        }
                    }
                }
            }
        }
        Some(g)
    }
}

/// Forward pass on explicit (effective) weights. `x_t` holds `heads` planes.
pub fn forward(
    arch: &Architecture,
    weights: &[f64],
    x_t: &[f64],
    t: usize,
    cond: &Conditioning,
    mut cache: Option<&mut Cache>,
) -> Vec<f64> {
    let layout = arch.layout();
    let (w, h) = (arch.width, arch.height);
    let n = w * h;
    debug_assert_eq!(x_t.len(), arch.heads * n);
    let embed = time_embedding(t);
    let mut act: Vec<f64> = x_t.iter().chain(&cond.channels).copied().collect();
    let last = layout.convs.len() - 1;
    if let Some(c) = cache.as_deref_mut() {
        c.padded.clear();
        c.pre.clear();
        c.embed = embed;
    }
    for (l, slot) in layout.convs.iter().enumerate() {
        let d = slot.dilation;
        let padded = pad(&act, slot.cin, w, h, d);
        let mut pre = vec![0.0; slot.cout * n];
        let (pw, ph) = (w + 2 * d, h + 2 * d);
        for co in 0..slot.cout {
            let mut shift = weights[slot.bias + co];
            if l < TIME_LAYERS {
                let row = &weights[layout.time[l] + co * TIME_EMBED_DIM..layout.time[l] + (co + 1) * TIME_EMBED_DIM];
                shift += row.iter().zip(&embed).map(|(a, b)| a * b).sum::<f64>();
            }
            let out = &mut pre[co * n..(co + 1) * n];
            out.iter_mut().for_each(|v| *v = shift);
            for ci in 0..slot.cin {
                let plane = &padded[ci * pw * ph..(ci + 1) * pw * ph];
                let wbase = slot.weight + (co * slot.cin + ci) * TAPS;
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wv = weights[wbase + ky * KERNEL + kx];
                        for y in 0..h {
                            let src = &plane[(y + ky * d) * pw + kx * d..][..w];
                            for (o, s) in out[y * w..(y + 1) * w].iter_mut().zip(src) {
                                *o += wv * s;
                            }
                        }
                    }
                }
            }
        }
        act = if l == last { pre.clone() } else { pre.iter().map(|&v| silu(v)).collect() };
        if let Some(c) = cache.as_deref_mut() {
            c.padded.push(padded);
            c.pre.push(pre);
        }
    }
    act
}

/// Accumulates into `grad` (effective-weight layout) the gradient of a scalar
/// whose derivative with respect to the network output is `d_out`.
pub fn backward(arch: &Architecture, weights: &[f64], cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
    let layout = arch.layout();
    let (w, h) = (arch.width, arch.height);
    let n = w * h;
    let last = layout.convs.len() - 1;
    let mut d_pre = d_out.to_vec();
    for l in (0..layout.convs.len()).rev() {
        let slot = layout.convs[l];
        if l != last {
            for (g, &p) in d_pre.iter_mut().zip(&cache.pre[l]) {
                *g *= silu_grad(p);
            }
        }
        let d = slot.dilation;
        let (pw, ph) = (w + 2 * d, h + 2 * d);
        let padded = &cache.padded[l];
        let need_input = l > 0;
        let mut d_padded = if need_input { vec![0.0; slot.cin * pw * ph] } else { Vec::new() };
        for co in 0..slot.cout {
            let g = &d_pre[co * n..(co + 1) * n];
            let gsum: f64 = g.iter().sum();
            grad[slot.bias + co] += gsum;
            if l < TIME_LAYERS {
                let off = layout.time[l] + co * TIME_EMBED_DIM;
                for (e, dst) in grad[off..off + TIME_EMBED_DIM].iter_mut().enumerate() {
                    *dst += gsum * cache.embed[e];
                }
            }
            for ci in 0..slot.cin {
                let plane = &padded[ci * pw * ph..(ci + 1) * pw * ph];
                let wbase = slot.weight + (co * slot.cin + ci) * TAPS;
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let mut acc = 0.0;
                        for y in 0..h {
                            let src = &plane[(y + ky * d) * pw + kx * d..][..w];
                            acc += g[y * w..(y + 1) * w].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                        grad[wbase + ky * KERNEL + kx] += acc;
                        if need_input {
                            let wv = weights[wbase + ky * KERNEL + kx];
                            let dplane = &mut d_padded[ci * pw * ph..(ci + 1) * pw * ph];
                            for y in 0..h {
                                let dst = &mut dplane[(y + ky * d) * pw + kx * d..][..w];
                                for (o, s) in dst.iter_mut().zip(&g[y * w..(y + 1) * w]) {
                                    *o += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        if !need_input {
            break;
        }
        let mut next = vec![0.0; slot.cin * n];
        for ci in 0..slot.cin {
            for y in 0..h {
                let src = ci * pw * ph + (y + d) * pw + d;
                next[ci * n + y * w..ci * n + (y + 1) * w].copy_from_slice(&d_padded[src..src + w]);
            }
        }
        d_pre = next;
    }
}
