//! Dense HWC tensors and the handful of layers the decoder needs, each with
//! an explicit backward pass.

use serde::{Deserialize, Serialize};

/// Row-major `height x width x channels` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * channels, "tensor data length");
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

/// Square convolution with zero "same" padding, stride 1.
/// Weights are laid out `[ky][kx][in][out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel,
            in_channels,
            out_channels,
            weight: vec![0.0; kernel * kernel * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        debug_assert_eq!(input.channels, self.in_channels);
        let (h, w) = (input.height, input.width);
        let (k, cin, cout) = (self.kernel, self.in_channels, self.out_channels);
        let pad = (k / 2) as isize;
        let mut out = Tensor::zeros(h, w, cout);
        for y in 0..h {
            for x in 0..w {
                let o = (y * w + x) * cout;
                let acc = &mut out.data[o..o + cout];
                acc.copy_from_slice(&self.bias);
                for ky in 0..k {
                    let yy = y as isize + ky as isize - pad;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let xx = x as isize + kx as isize - pad;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let src = input.at(yy as usize, xx as usize);
                        let wbase = (ky * k + kx) * cin * cout;
                        for (i, &v) in src.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let wrow = &self.weight[wbase + i * cout..wbase + (i + 1) * cout];
                            for (a, wv) in acc.iter_mut().zip(wrow) {
                                *a += v * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to `input`.
    pub fn backward(&self, input: &Tensor, d_out: &Tensor, grad: &mut Conv) -> Tensor {
        let (h, w) = (input.height, input.width);
        let (k, cin, cout) = (self.kernel, self.in_channels, self.out_channels);
        let pad = (k / 2) as isize;
        let mut d_in = Tensor::zeros(h, w, cin);
        for y in 0..h {
            for x in 0..w {
                let g = d_out.at(y, x);
                if g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for (b, gv) in grad.bias.iter_mut().zip(g) {
                    *b += gv;
                }
                for ky in 0..k {
                    let yy = y as isize + ky as isize - pad;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let xx = x as isize + kx as isize - pad;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let (yy, xx) = (yy as usize, xx as usize);
                        let wbase = (ky * k + kx) * cin * cout;
                        let src_i = (yy * w + xx) * cin;
                        for i in 0..cin {
                            let v = input.data[src_i + i];
                            let range = wbase + i * cout..wbase + (i + 1) * cout;
                            let wrow = &self.weight[range.clone()];
                            let mut dsum = 0.0;
                            for (wv, gv) in wrow.iter().zip(g) {
                                dsum += wv * gv;
                            }
                            d_in.data[src_i + i] += dsum;
                            if v != 0.0 {
                                for (gw, gv) in grad.weight[range].iter_mut().zip(g) {
                                    *gw += v * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        d_in
    }
}

/// Affine map `y = W x + b`, weights laid out `[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients; the input is treated as constant.
    pub fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut Dense) {
        for (o, &g) in d_out.iter().enumerate() {
            grad.bias[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for (gw, v) in row.iter_mut().zip(x) {
                *gw += g * v;
            }
        }
    }
}

pub fn relu_inplace(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Tensor {
    let (h, w, c) = (input.height * factor, input.width * factor, input.channels);
    let mut out = Tensor::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            out.at_mut(y, x)
                .copy_from_slice(input.at(y / factor, x / factor));
        }
    }
    out
}

pub fn upsample_nearest_backward(d_out: &Tensor, factor: usize) -> Tensor {
    let mut d_in = Tensor::zeros(d_out.height / factor, d_out.width / factor, d_out.channels);
    for y in 0..d_out.height {
        for x in 0..d_out.width {
            let src = d_out.at(y, x);
            for (a, b) in d_in.at_mut(y / factor, x / factor).iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    d_in
}

/// Source taps `(i0, i1, weight_of_i1)` for half-pixel-centred bilinear
/// resampling of one axis.
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear(input: &Tensor, height: usize, width: usize) -> Tensor {
    let ty = bilinear_taps(input.height, height);
    let tx = bilinear_taps(input.width, width);
    let c = input.channels;
    let mut out = Tensor::zeros(height, width, c);
    for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
            let taps = [
                (y0, x0, (1.0 - wy) * (1.0 - wx)),
                (y0, x1, (1.0 - wy) * wx),
                (y1, x0, wy * (1.0 - wx)),
                (y1, x1, wy * wx),
            ];
            let dst = &mut out.data[(y * width + x) * c..][..c];
            for (sy, sx, wt) in taps {
                for (d, s) in dst.iter_mut().zip(input.at(sy, sx)) {
                    *d += wt * s;
                }
            }
        }
    }
    out
}

pub fn resize_bilinear_backward(d_out: &Tensor, in_height: usize, in_width: usize) -> Tensor {
    let ty = bilinear_taps(in_height, d_out.height);
    let tx = bilinear_taps(in_width, d_out.width);
    let mut d_in = Tensor::zeros(in_height, in_width, d_out.channels);
    for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
            let taps = [
                (y0, x0, (1.0 - wy) * (1.0 - wx)),
                (y0, x1, (1.0 - wy) * wx),
                (y1, x0, wy * (1.0 - wx)),
                (y1, x1, wy * wx),
            ];
            let g = d_out.at(y, x).to_vec();
            for (sy, sx, wt) in taps {
                for (d, gv) in d_in.at_mut(sy, sx).iter_mut().zip(&g) {
                    *d += wt * gv;
                }
            }
        }
    }
    d_in
}

/// Softmax over every element of `logits`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
