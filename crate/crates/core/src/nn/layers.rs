use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, recycle, scratch, Tensor};

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Fully connected layer, `y = x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
    /// `[out, in]`, entries in {0, 1}
    pub weight_mask: Tensor,
}

impl Dense {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Dense {
            weights: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
            weight_mask: Tensor::filled(&[out_features, in_features], 1.0),
        }
    }

    /// Kaiming-uniform fan-in initialization, zero bias.
    pub fn init<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let mut layer = Dense::zeros(in_features, out_features);
        let bound = (6.0 / in_features as f32).sqrt();
        for w in layer.weights.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn kept_weights(&self) -> usize {
        self.weight_mask.data().iter().filter(|&&m| m != 0.0).count()
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Tensor {
        let (k, i, o) = (x.rows(), self.in_features(), self.out_features());
        let mut y = Tensor::zeros(&[k, o]);
        {
            let out = y.data_mut();
            for row in out.chunks_exact_mut(o) {
                row.copy_from_slice(self.bias.data());
            }
        }
        gemm(k, i, o, 1.0, x.data(), false, self.weights.data(), true, 1.0, y.data_mut());
        y
    }

    /// Returns `(dx, dW, db)` for upstream gradient `dy` of shape `[k, out]`.
    pub(crate) fn backward(&self, x: &Tensor, dy: &Tensor, need_dx: bool) -> (Option<Tensor>, Tensor, Tensor) {
        let (k, i, o) = (x.rows(), self.in_features(), self.out_features());
        let mut dw = Tensor::zeros(&[o, i]);
        gemm(o, k, i, 1.0, dy.data(), true, x.data(), false, 0.0, dw.data_mut());
        let mut db = Tensor::zeros(&[o]);
        for row in dy.data().chunks_exact(o) {
            for (b, g) in db.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let dx = need_dx.then(|| {
            let mut dx = Tensor::zeros(&[k, i]);
            gemm(k, o, i, 1.0, dy.data(), false, self.weights.data(), false, 0.0, dx.data_mut());
            dx
        });
        (dx, dw, db)
    }
}

/// 2-D convolution over `[k, in_ch, h, w]` maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_ch, in_ch, kh, kw]`
    pub kernels: Tensor,
    /// `[out_ch]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    /// `[out_ch]`
    pub out_channel_mask: Tensor,
    /// `[in_ch]`
    pub in_channel_mask: Tensor,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            kernels: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
            out_channel_mask: Tensor::filled(&[out_ch], 1.0),
            in_channel_mask: Tensor::filled(&[in_ch], 1.0),
        }
    }

    pub fn init<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let mut layer = Conv2d::zeros(in_ch, out_ch, kernel, stride, padding);
        let bound = (6.0 / (in_ch * kernel * kernel) as f32).sqrt();
        for w in layer.kernels.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if self.stride == 0 || ph < kh || pw < kw {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    /// Elementwise kernel mask implied by the two channel masks.
    pub fn kernel_mask(&self) -> Vec<f32> {
        let (kh, kw) = self.kernel_size();
        let per = kh * kw;
        let mut mask = Vec::with_capacity(self.kernels.len());
        for &om in self.out_channel_mask.data() {
            for &im in self.in_channel_mask.data() {
                mask.extend(std::iter::repeat_n(om * im, per));
            }
        }
        mask
    }

    /// Unfolds one sample into columns `offset..offset + oh*ow` of a row-major
    /// `[ic*kh*kw, ld]` matrix.
    #[allow(clippy::too_many_arguments)]
    fn im2col(&self, x: &[f32], h: usize, w: usize, oh: usize, ow: usize, col: &mut [f32], ld: usize, offset: usize) {
        let (kh, kw) = self.kernel_size();
        let ic = self.in_channels();
        let (s, p) = (self.stride as isize, self.padding as isize);
        let spatial = oh * ow;
        for c in 0..ic {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &mut col[((c * kh + ky) * kw + kx) * ld + offset..][..spatial];
                    for oy in 0..oh {
                        let iy = oy as isize * s + ky as isize - p;
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let (lo, hi) = valid_span(ow, w, s, kx as isize - p);
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        if s == 1 {
                            let shift = (lo as isize + kx as isize - p) as usize;
                            dst[lo..hi].copy_from_slice(&src[shift..shift + (hi - lo)]);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate().take(hi).skip(lo) {
                                *d = src[(ox as isize * s + kx as isize - p) as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, col: &[f32], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f32], ld: usize, offset: usize) {
        let (kh, kw) = self.kernel_size();
        let ic = self.in_channels();
        let (s, p) = (self.stride as isize, self.padding as isize);
        let spatial = oh * ow;
        for c in 0..ic {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &col[((c * kh + ky) * kw + kx) * ld + offset..][..spatial];
                    for oy in 0..oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[oy * ow..(oy + 1) * ow];
                        let (lo, hi) = valid_span(ow, w, s, kx as isize - p);
                        for (ox, g) in src.iter().enumerate().take(hi).skip(lo) {
                            dst[(ox as isize * s + kx as isize - p) as usize] += g;
                        }
                    }
                }
            }
        }
    }

    /// The whole batch is unfolded into one `[ic*kh*kw, k*oh*ow]` matrix so
    /// each pass is a single large product.
    pub(crate) fn forward(&self, x: &Tensor) -> Tensor {
        let (k, h, w) = (x.rows(), x.shape()[2], x.shape()[3]);
        let (oh, ow) = self.output_hw(h, w).expect("conv geometry validated by Network");
        let (oc, ic) = (self.out_channels(), self.in_channels());
        let (kh, kw) = self.kernel_size();
        let depth = ic * kh * kw;
        let spatial = oh * ow;
        let ld = k * spatial;
        let in_len = ic * h * w;
        let mut col = scratch(depth * ld);
        for b in 0..k {
            self.im2col(&x.data()[b * in_len..(b + 1) * in_len], h, w, oh, ow, &mut col, ld, b * spatial);
        }
        let mut prod = scratch(oc * ld);
        gemm(oc, depth, ld, 1.0, self.kernels.data(), false, &col, false, 0.0, &mut prod);
        recycle(col);
        let mut y = Tensor::zeros(&[k, oc, oh, ow]);
        let out = y.data_mut();
        for o in 0..oc {
            let bias = self.bias.data()[o];
            for b in 0..k {
                let src = &prod[o * ld + b * spatial..][..spatial];
                let dst = &mut out[(b * oc + o) * spatial..][..spatial];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias;
                }
            }
        }
        recycle(prod);
        y
    }

    /// Returns `(dx, dK, db)`.
    pub(crate) fn backward(&self, x: &Tensor, dy: &Tensor, need_dx: bool) -> (Option<Tensor>, Tensor, Tensor) {
        let (k, h, w) = (x.rows(), x.shape()[2], x.shape()[3]);
        let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
        let (oc, ic) = (self.out_channels(), self.in_channels());
        let (kh, kw) = self.kernel_size();
        let depth = ic * kh * kw;
        let spatial = oh * ow;
        let ld = k * spatial;
        let in_len = ic * h * w;

        // dy as [oc, k*spatial]
        let mut g = scratch(oc * ld);
        let mut db = Tensor::zeros(&[oc]);
        for b in 0..k {
            for o in 0..oc {
                let src = &dy.data()[(b * oc + o) * spatial..][..spatial];
                g[o * ld + b * spatial..][..spatial].copy_from_slice(src);
                db.data_mut()[o] += src.iter().sum::<f32>();
            }
        }
        let mut col = scratch(depth * ld);
        for b in 0..k {
            self.im2col(&x.data()[b * in_len..(b + 1) * in_len], h, w, oh, ow, &mut col, ld, b * spatial);
        }
        let mut dk = Tensor::zeros(self.kernels.shape());
        gemm(oc, ld, depth, 1.0, &g, false, &col, true, 0.0, dk.data_mut());
        let dx = need_dx.then(|| {
            // the unfolded input is no longer needed; reuse it for the column gradient
            gemm(depth, oc, ld, 1.0, self.kernels.data(), true, &g, false, 0.0, &mut col);
            let mut dx = Tensor::zeros(x.shape());
            for b in 0..k {
                self.col2im(&col, h, w, oh, ow, &mut dx.data_mut()[b * in_len..(b + 1) * in_len], ld, b * spatial);
            }
            dx
        });
        recycle(col);
        recycle(g);
        (dx, dk, db)
    }
}

/// Output columns `lo..hi` whose input column `ox * stride + shift` lies in `0..w`.
fn valid_span(ow: usize, w: usize, stride: isize, shift: isize) -> (usize, usize) {
    let lo = if shift >= 0 { 0 } else { ((-shift + stride - 1) / stride) as usize };
    let last = w as isize - 1 - shift;
    let hi = if last < 0 { 0 } else { (last / stride + 1) as usize };
    (lo.min(ow), hi.min(ow).max(lo.min(ow)))
}

/// Per-channel batch normalization over `[k, ch, h, w]` maps.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub epsilon: f32,
    pub momentum: f32,
    pub channel_mask: Tensor,
}

/// What the backward pass needs from a train-mode BN forward.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            channel_mask: Tensor::filled(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn kept_channels(&self) -> usize {
        self.channel_mask.data().iter().filter(|&&m| m != 0.0).count()
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor) -> (Tensor, BnCache) {
        let (k, c) = (x.rows(), x.shape()[1]);
        let spatial: usize = x.shape()[2..].iter().product();
        let n = (k * spatial) as f64;
        let mut y = Tensor::zeros(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0f32; c];
        for (ch, inv) in inv_std.iter_mut().enumerate() {
            let (mut sum, mut sq) = (0.0f64, 0.0f64);
            for b in 0..k {
                for &v in &x.data()[(b * c + ch) * spatial..][..spatial] {
                    sum += v as f64;
                    sq += v as f64 * v as f64;
                }
            }
            let mean = sum / n;
            let var = (sq / n - mean * mean).max(0.0);
            let istd = 1.0 / (var + self.epsilon as f64).sqrt();
            *inv = istd as f32;
            let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for b in 0..k {
                let off = (b * c + ch) * spatial;
                for i in off..off + spatial {
                    let xh = ((x.data()[i] as f64 - mean) * istd) as f32;
                    xhat.data_mut()[i] = xh;
                    y.data_mut()[i] = g * xh + be;
                }
            }
            let m = self.momentum as f64;
            let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = ((1.0 - m) * *rm as f64 + m * mean) as f32;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = ((1.0 - m) * *rv as f64 + m * unbiased) as f32;
        }
        (y, BnCache { xhat, inv_std })
    }

    pub(crate) fn forward_eval(&self, x: &Tensor) -> Tensor {
        let c = x.shape()[1];
        let spatial: usize = x.shape()[2..].iter().product();
        let mut y = x.clone();
        let (scale, shift) = self.eval_affine();
        for (i, plane) in y.data_mut().chunks_exact_mut(spatial).enumerate() {
            let ch = i % c;
            for v in plane {
                *v = *v * scale[ch] + shift[ch];
            }
        }
        y
    }

    /// Per-channel `(scale, shift)` of the frozen eval-mode transform.
    pub fn eval_affine(&self) -> (Vec<f32>, Vec<f32>) {
        (0..self.channels())
            .map(|ch| {
                let istd = 1.0 / (self.running_var.data()[ch] + self.epsilon).sqrt();
                let s = self.gamma.data()[ch] * istd;
                (s, self.beta.data()[ch] - self.running_mean.data()[ch] * s)
            })
            .unzip()
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub(crate) fn backward(&self, cache: &BnCache, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
        let (k, c) = (dy.rows(), dy.shape()[1]);
        let spatial: usize = dy.shape()[2..].iter().product();
        let n = (k * spatial) as f64;
        let mut dx = Tensor::zeros(dy.shape());
        let mut dgamma = Tensor::zeros(&[c]);
        let mut dbeta = Tensor::zeros(&[c]);
        for ch in 0..c {
            let (mut sdy, mut sdyx) = (0.0f64, 0.0f64);
            for b in 0..k {
                let off = (b * c + ch) * spatial;
                for i in off..off + spatial {
                    sdy += dy.data()[i] as f64;
                    sdyx += dy.data()[i] as f64 * cache.xhat.data()[i] as f64;
                }
            }
            dgamma.data_mut()[ch] = sdyx as f32;
            dbeta.data_mut()[ch] = sdy as f32;
            let coef = self.gamma.data()[ch] as f64 * cache.inv_std[ch] as f64 / n;
            for b in 0..k {
                let off = (b * c + ch) * spatial;
                for i in off..off + spatial {
                    let g = n * dy.data()[i] as f64 - sdy - cache.xhat.data()[i] as f64 * sdyx;
                    dx.data_mut()[i] = (coef * g) as f32;
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

/// Non-overlapping max pooling with a square window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub size: usize,
}

impl MaxPool2d {
    pub(crate) fn forward(&self, x: &Tensor) -> (Tensor, Vec<u32>) {
        let (k, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let s = self.size;
        let (oh, ow) = (h / s, w / s);
        let mut y = Tensor::zeros(&[k, c, oh, ow]);
        let mut arg = vec![0u32; k * c * oh * ow];
        for plane in 0..k * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (oy * s) * w + ox * s;
                    for dy in 0..s {
                        for dx in 0..s {
                            let idx = (oy * s + dy) * w + ox * s + dx;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    let o = plane * oh * ow + oy * ow + ox;
                    y.data_mut()[o] = src[best];
                    arg[o] = best as u32;
                }
            }
        }
        (y, arg)
    }

    pub(crate) fn backward(&self, input_shape: &[usize], argmax: &[u32], dy: &Tensor) -> Tensor {
        let (h, w) = (input_shape[2], input_shape[3]);
        let out_plane = dy.shape()[2] * dy.shape()[3];
        let mut dx = Tensor::zeros(input_shape);
        for (o, g) in dy.data().iter().enumerate() {
            let plane = o / out_plane;
            dx.data_mut()[plane * h * w + argmax[o] as usize] += g;
        }
        dx
    }
}

/// Layer descriptor used by configs and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { out: usize },
    Conv2d { out: usize, kernel: usize, stride: usize, padding: usize },
    BatchNorm2d,
    Relu,
    MaxPool2d { size: usize },
    Flatten,
}

/// One network layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    Relu,
    MaxPool2d(MaxPool2d),
    Flatten,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm2d(_) => "batch_norm2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d(_) => "max_pool2d",
            Layer::Flatten => "flatten",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: &str| Err(Error::shape(format!("{} layer: {why} (input {input:?})", self.kind_name())));
        match self {
            Layer::Dense(d) => {
                if input.iter().product::<usize>() != d.in_features() || input.len() != 1 {
                    return bad(&format!("expects a flat input of {}", d.in_features()));
                }
                Ok(vec![d.out_features()])
            }
            Layer::Conv2d(c) => {
                if input.len() != 3 || input[0] != c.in_channels() {
                    return bad(&format!("expects [{}, h, w]", c.in_channels()));
                }
                match c.output_hw(input[1], input[2]) {
                    Some((oh, ow)) => Ok(vec![c.out_channels(), oh, ow]),
                    None => bad("kernel larger than padded input"),
                }
            }
            Layer::BatchNorm2d(bn) => {
                if input.len() != 3 || input[0] != bn.channels() {
                    return bad(&format!("expects [{}, h, w]", bn.channels()));
                }
                Ok(input.to_vec())
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d(p) => {
                if input.len() != 3 || p.size == 0 || input[1] < p.size || input[2] < p.size {
                    return bad("expects [c, h, w] at least one window wide");
                }
                Ok(vec![input[0], input[1] / p.size, input[2] / p.size])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense { out: d.out_features() },
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                out: c.out_channels(),
                kernel: c.kernel_size().0,
                stride: c.stride,
                padding: c.padding,
            },
            Layer::BatchNorm2d(_) => LayerSpec::BatchNorm2d,
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2d(p) => LayerSpec::MaxPool2d { size: p.size },
            Layer::Flatten => LayerSpec::Flatten,
        }
    }
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = v.max(0.0);
    }
    y
}

pub(crate) fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    }

    /// Direct seven-loop convolution in f64.
    fn naive_conv(c: &Conv2d, x: &Tensor) -> Vec<f64> {
        let (k, ic, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = c.output_hw(h, w).unwrap();
        let (kh, kw) = c.kernel_size();
        let oc = c.out_channels();
        let mut y = vec![0.0; k * oc * oh * ow];
        for b in 0..k {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = c.bias.data()[o] as f64;
                        for i in 0..ic {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * c.stride + ky) as isize - c.padding as isize;
                                    let ix = (ox * c.stride + kx) as isize - c.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((b * ic + i) * h + iy as usize) * w + ix as usize];
                                    let kv = c.kernels.data()[((o * ic + i) * kh + ky) * kw + kx];
                                    acc += xv as f64 * kv as f64;
                                }
                            }
                        }
                        y[((b * oc + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_forward_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (stride, padding, kernel, h) in [(1, 1, 3, 7), (2, 1, 3, 8), (1, 0, 3, 5), (2, 2, 5, 9), (3, 0, 1, 7)] {
            let mut c = Conv2d::init(2, 3, kernel, stride, padding, &mut rng);
            c.bias = random(&[3], 9);
            let x = random(&[2, 2, h, h + 1], 1);
            let y = c.forward(&x);
            let want = naive_conv(&c, &x);
            assert_eq!(y.len(), want.len());
            for (a, b) in y.data().iter().zip(&want) {
                assert!((*a as f64 - b).abs() < 1e-5, "stride {stride} padding {padding}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_backward_matches_adjoint_of_direct_loops() {
        // <dy, conv(x)> is linear in x and K, so its gradients follow from the oracle:
        // d/dx_j = <dy, conv(e_j)> with the bias removed, likewise for kernels.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (stride, padding) in [(1, 1), (2, 1), (2, 0)] {
            let mut c = Conv2d::init(2, 2, 3, stride, padding, &mut rng);
            c.bias = random(&[2], 3);
            let x = random(&[1, 2, 5, 6], 5);
            let y = c.forward(&x);
            let dy = random(y.shape(), 6);
            let (dx, dk, db) = c.backward(&x, &dy, true);
            let dx = dx.unwrap();
            let dot = |c: &Conv2d, x: &Tensor| -> f64 {
                naive_conv(c, x).iter().zip(dy.data()).map(|(a, &g)| a * g as f64).sum()
            };
            let mut nobias = c.clone();
            nobias.bias = Tensor::zeros(&[2]);
            for j in 0..x.len() {
                let mut e = Tensor::zeros(x.shape());
                e.data_mut()[j] = 1.0;
                assert!((dot(&nobias, &e) - dx.data()[j] as f64).abs() < 1e-4);
            }
            for j in 0..c.kernels.len() {
                let mut kc = nobias.clone();
                kc.kernels = Tensor::zeros(c.kernels.shape());
                kc.kernels.data_mut()[j] = 1.0;
                assert!((dot(&kc, &x) - dk.data()[j] as f64).abs() < 1e-4);
            }
            for o in 0..2 {
                let plane = y.len() / 2;
                let want: f32 = dy.data()[o * plane..(o + 1) * plane].iter().sum();
                assert!((db.data()[o] - want).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut c = Conv2d::zeros(1, 1, 3, 1, 1);
        c.kernels.data_mut()[4] = 1.0;
        let x = random(&[2, 1, 4, 4], 2);
        assert_eq!(c.forward(&x), x);
    }

    #[test]
    fn batch_norm_train_statistics() {
        let mut bn = BatchNorm2d::new(1);
        let x = Tensor::from_vec(&[4, 1, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = bn.forward_train(&x);
        // mean 2.5, biased variance 1.25
        let istd = 1.0 / (1.25f64 + 1e-5).sqrt();
        for (v, xv) in y.data().iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((*v as f64 - (xv - 2.5) * istd).abs() < 1e-6);
        }
        assert!((bn.running_mean.data()[0] - 0.25).abs() < 1e-7);
        // unbiased variance 5/3 blended with the initial 1
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let p = MaxPool2d { size: 2 };
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.5, 3.0, -1.0, 2.0]).unwrap();
        let (y, arg) = p.forward(&x);
        assert_eq!(y.data(), &[3.0]);
        let dx = p.backward(x.shape(), &arg, &Tensor::filled(&[1, 1, 1, 1], 7.0));
        assert_eq!(dx.data(), &[0.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_forward_is_affine() {
        let mut d = Dense::zeros(2, 2);
        d.weights = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        d.bias = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap();
        assert_eq!(d.forward(&x).data(), &[-0.5, -1.5]);
    }

    #[test]
    fn kaiming_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = Dense::init(50, 20, &mut rng);
        let bound = (6.0f32 / 50.0).sqrt();
        assert!(d.weights.data().iter().all(|w| w.abs() <= bound));
        assert!(d.bias.data().iter().all(|&b| b == 0.0));
    }
}
