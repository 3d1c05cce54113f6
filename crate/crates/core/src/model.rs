//! Fully-convolutional pixel scorer with hand-written backpropagation.
//!
//! Every layer is a 3×3 cross-correlation with zero "same" padding. Hidden
//! layers use leaky-ReLU (slope 0.01); the last layer is a sigmoid. There is
//! no pooling, so the output has the input's resolution.
//!
//! Parameters live in one flat vector, layer by layer, weights first
//! (`[out][in][ky][kx]`) followed by the layer's biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ProbMap, SliceImage};

pub const LEAKY_SLOPE: f64 = 0.01;
const K: usize = 3;
const TAPS: usize = K * K;

/// Channel widths from input to output, e.g. `[1, 8, 8, 8, 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout(pub Vec<usize>);

impl Default for Layout {
    fn default() -> Self {
        Layout(vec![1, 8, 8, 8, 1])
    }
}

impl Layout {
    pub fn validate(&self) -> Result<()> {
        let ch = &self.0;
        if ch.len() < 2 {
            return Err(Error::InvalidConfig("layout needs at least two entries".into()));
        }
        if ch[0] != 1 || ch[ch.len() - 1] != 1 {
            return Err(Error::InvalidConfig(format!(
                "layout must start and end with one channel, got {ch:?}"
            )));
        }
        if ch.contains(&0) {
            return Err(Error::InvalidConfig("layout has a zero-width layer".into()));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.0.len() - 1
    }

    /// `(c_in, c_out)` of layer `l`.
    pub fn layer(&self, l: usize) -> (usize, usize) {
        (self.0[l], self.0[l + 1])
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| {
                let (ci, co) = self.layer(l);
                TAPS * ci * co + co
            })
            .sum()
    }

    /// Start of layer `l`'s weights in the flat parameter vector.
    fn offset(&self, l: usize) -> usize {
        (0..l)
            .map(|j| {
                let (ci, co) = self.layer(j);
                TAPS * ci * co + co
            })
            .sum()
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;

    /// Parses `"1-8-8-1"` style layouts.
    fn from_str(s: &str) -> Result<Self> {
        let ch = s
            .split(['-', ','])
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("bad layout `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let layout = Layout(ch);
        layout.validate()?;
        Ok(layout)
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegNetParams {
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl SegNetParams {
    pub fn zeros(layout: Layout) -> Result<Self> {
        layout.validate()?;
        let n = layout.param_count();
        Ok(Self {
            layout,
            data: vec![0.0; n],
        })
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    fn check(&self) -> Result<()> {
        self.layout.validate()?;
        if self.data.len() != self.layout.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for layout {} (expected {})",
                self.data.len(),
                self.layout,
                self.layout.param_count()
            )));
        }
        Ok(())
    }

    /// Weights `[out][in][ky][kx]` and biases of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (ci, co) = self.layout.layer(l);
        let start = self.layout.offset(l);
        let nw = TAPS * ci * co;
        (
            &self.data[start..start + nw],
            &self.data[start + nw..start + nw + co],
        )
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (ci, co) = self.layout.layer(l);
        let start = self.layout.offset(l);
        let nw = TAPS * ci * co;
        let (w, b) = self.data[start..start + nw + co].split_at_mut(nw);
        (w, b)
    }
}

/// He-style uniform initialization, `U(−√(6/fan_in), √(6/fan_in))`, zero
/// biases. Fully determined by `seed`.
pub fn init_params(seed: u64, layout: &Layout) -> Result<SegNetParams> {
    let mut params = SegNetParams::zeros(layout.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..layout.n_layers() {
        let (ci, _) = layout.layer(l);
        let bound = (6.0 / (TAPS * ci) as f64).sqrt();
        let (w, _) = params.layer_mut(l);
        for v in w.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Activations recorded by [`forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    width: usize,
    height: usize,
    layout: Layout,
    /// Zero-padded input of each layer, `[channel][(H+2)×(W+2)]`.
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

#[inline]
fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn forward(params: &SegNetParams, image: &SliceImage) -> Result<(ProbMap, ForwardCache)> {
    params.check()?;
    let (w, h) = image.dims();
    if w < K || h < K {
        return Err(Error::ShapeMismatch(format!(
            "image {w}x{h} smaller than the {K}x{K} kernel"
        )));
    }
    let (wp, hp) = (w + 2, h + 2);
    let plane = wp * hp;
    let layout = &params.layout;

    let mut input = vec![0.0; plane];
    for row in 0..h {
        input[(row + 1) * wp + 1..(row + 1) * wp + 1 + w]
            .copy_from_slice(&image.as_slice()[row * w..(row + 1) * w]);
    }
    let mut inputs = Vec::with_capacity(layout.n_layers());
    let mut pre = Vec::new();
    for l in 0..layout.n_layers() {
        let (ci, co) = layout.layer(l);
        let (weights, bias) = params.layer(l);
        pre.clear();
        pre.resize(co * w * h, 0.0);
        conv_forward(&input, weights, bias, ci, co, w, h, &mut pre);
        inputs.push(input);
        if l + 1 < layout.n_layers() {
            let mut next = vec![0.0; co * plane];
            for o in 0..co {
                for row in 0..h {
                    let src = &pre[o * w * h + row * w..o * w * h + (row + 1) * w];
                    let dst = &mut next[o * plane + (row + 1) * wp + 1..][..w];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = leaky(s);
                    }
                }
            }
            input = next;
        } else {
            input = Vec::new();
        }
    }
    let output: Vec<f64> = pre.iter().map(|&v| sigmoid(v)).collect();
    let prob = Grid::from_vec(w, h, output.clone())?;
    Ok((
        prob,
        ForwardCache {
            width: w,
            height: h,
            layout: layout.clone(),
            inputs,
            output,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    ci: usize,
    co: usize,
    w: usize,
    h: usize,
    out: &mut [f64],
) {
    let wp = w + 2;
    let plane = wp * (h + 2);
    for o in 0..co {
        let dst_plane = &mut out[o * w * h..(o + 1) * w * h];
        dst_plane.fill(bias[o]);
        for i in 0..ci {
            let src_plane = &input[i * plane..(i + 1) * plane];
            let kern = &weights[(o * ci + i) * TAPS..(o * ci + i + 1) * TAPS];
            for row in 0..h {
                let dst = &mut dst_plane[row * w..(row + 1) * w];
                for ky in 0..K {
                    let line = &src_plane[(row + ky) * wp..(row + ky) * wp + wp];
                    let (k0, k1, k2) = (kern[ky * K], kern[ky * K + 1], kern[ky * K + 2]);
                    let (l0, l1, l2) = (&line[..w], &line[1..w + 1], &line[2..w + 2]);
                    for (((d, &a), &b), &c) in dst.iter_mut().zip(l0).zip(l1).zip(l2) {
                        *d += k0 * a + k1 * b + k2 * c;
                    }
                }
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Gradient of a scalar loss w.r.t. every parameter, in the flat layout of
/// [`SegNetParams::data`], given `∂loss/∂prob`.
pub fn backward(params: &SegNetParams, cache: &ForwardCache, grad_prob: &Grid<f64>) -> Result<Vec<f64>> {
    params.check()?;
    if cache.layout != params.layout {
        return Err(Error::CacheMismatch(format!(
            "cache layout {} vs params {}",
            cache.layout, params.layout
        )));
    }
    if grad_prob.dims() != (cache.width, cache.height) {
        return Err(Error::CacheMismatch(format!(
            "gradient {:?} vs cached activations {:?}",
            grad_prob.dims(),
            (cache.width, cache.height)
        )));
    }
    let (w, h) = (cache.width, cache.height);
    let (wp, hp) = (w + 2, h + 2);
    let plane = wp * hp;
    let layout = &params.layout;
    let mut grads = vec![0.0; params.data.len()];

    // ∂loss/∂pre-activation of the current layer, [channel][H×W]
    let mut delta: Vec<f64> = cache
        .output
        .iter()
        .zip(grad_prob.as_slice())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();

    for l in (0..layout.n_layers()).rev() {
        let (ci, co) = layout.layer(l);
        let input = &cache.inputs[l];
        let start = layout.offset(l);
        let nw = TAPS * ci * co;
        {
            let (gw, gb) = grads[start..start + nw + co].split_at_mut(nw);
            for o in 0..co {
                let d_plane = &delta[o * w * h..(o + 1) * w * h];
                gb[o] = d_plane.iter().sum();
                for i in 0..ci {
                    let src_plane = &input[i * plane..(i + 1) * plane];
                    let gk = &mut gw[(o * ci + i) * TAPS..(o * ci + i + 1) * TAPS];
                    for row in 0..h {
                        let d = &d_plane[row * w..(row + 1) * w];
                        for ky in 0..K {
                            let line = &src_plane[(row + ky) * wp..(row + ky) * wp + wp];
                            gk[ky * K] += dot(d, &line[..w]);
                            gk[ky * K + 1] += dot(d, &line[1..w + 1]);
                            gk[ky * K + 2] += dot(d, &line[2..w + 2]);
                        }
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let (weights, _) = params.layer(l);
        let mut d_in = vec![0.0; ci * plane];
        for o in 0..co {
            let d_plane = &delta[o * w * h..(o + 1) * w * h];
            for i in 0..ci {
                let kern = &weights[(o * ci + i) * TAPS..(o * ci + i + 1) * TAPS];
                let dst_plane = &mut d_in[i * plane..(i + 1) * plane];
                for row in 0..h {
                    let d = &d_plane[row * w..(row + 1) * w];
                    for ky in 0..K {
                        let line = &mut dst_plane[(row + ky) * wp..(row + ky) * wp + wp];
                        for (kx, &k) in kern[ky * K..ky * K + K].iter().enumerate() {
                            for (t, &g) in line[kx..kx + w].iter_mut().zip(d) {
                                *t += k * g;
                            }
                        }
                    }
                }
            }
        }
        // back through the leaky-ReLU that produced this layer's input
        let mut next = vec![0.0; ci * w * h];
        for i in 0..ci {
            for row in 0..h {
                let a = &input[i * plane + (row + 1) * wp + 1..][..w];
                let g = &d_in[i * plane + (row + 1) * wp + 1..][..w];
                let dst = &mut next[i * w * h + row * w..][..w];
                for x in 0..w {
                    dst[x] = if a[x] > 0.0 { g[x] } else { LEAKY_SLOPE * g[x] };
                }
            }
        }
        delta = next;
    }
    Ok(grads)
}
