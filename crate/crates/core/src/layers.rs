//! Forward and backward passes for every layer type of the network:
//! dense convolution with ReLU, local response normalization across
//! channels, learned-scale average sub-sampling, fully connected layers
//! and max pooling, plus the softmax cross-entropy head.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Scalar, Tensor};

/// Dense convolution: every input channel maps to every output channel.
/// ReLU is applied as part of the forward response.
#[derive(Debug, Clone)]
pub struct ConvLayer<T: Scalar = f32> {
    /// (kh, kw, in_channels, out_channels)
    pub kernels: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T: Scalar> {
    input: FeatureMap<T>,
    output: FeatureMap<T>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub kernels: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[3]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[2]
    }

    fn out_extents(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = (self.kernels.shape()[0], self.kernels.shape()[1]);
        let eh = h + 2 * self.pad;
        let ew = w + 2 * self.pad;
        if eh < kh || ew < kw {
            return Err(Error::dim(format!(
                "conv kernel {}x{} larger than padded input {}x{}",
                kh, kw, eh, ew
            )));
        }
        Ok(((eh - kh) / self.stride + 1, (ew - kw) / self.stride + 1))
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, ConvCache<T>)> {
        let (h, w, c, s) = x.dims();
        let (kh, kw) = (self.kernels.shape()[0], self.kernels.shape()[1]);
        let (cin, cout) = (self.in_channels(), self.out_channels());
        if c != cin {
            return Err(Error::dim(format!(
                "conv expects {} input channels, got {}",
                cin, c
            )));
        }
        let (oh, ow) = self.out_extents(h, w)?;
        let mut out = FeatureMap::zeros(oh, ow, cout, s);
        let kd = self.kernels.data();
        let xd = x.tensor().data();
        let mut acc = vec![T::zero(); cout];
        for b in 0..s {
            for oi in 0..oh {
                for oj in 0..ow {
                    acc.copy_from_slice(&self.bias);
                    for u in 0..kh {
                        let ii = (oi * self.stride + u) as isize - self.pad as isize;
                        if ii < 0 || ii as usize >= h {
                            continue;
                        }
                        for v in 0..kw {
                            let jj = (oj * self.stride + v) as isize - self.pad as isize;
                            if jj < 0 || jj as usize >= w {
                                continue;
                            }
                            let xbase = x.offset(ii as usize, jj as usize, 0, b);
                            for m in 0..cin {
                                let xv = xd[xbase + m * s];
                                if xv == T::zero() {
                                    continue;
                                }
                                let kbase = ((u * kw + v) * cin + m) * cout;
                                let krow = &kd[kbase..kbase + cout];
                                for (a, &kv) in acc.iter_mut().zip(krow) {
                                    *a += xv * kv;
                                }
                            }
                        }
                    }
                    let obase = out.offset(oi, oj, 0, b);
                    let os = out.tensor_mut().data_mut();
                    for (n, &a) in acc.iter().enumerate() {
                        os[obase + n * s] = a;
                    }
                }
            }
        }
        let out = FeatureMap::new(out.into_tensor().relu())?;
        let cache = ConvCache {
            input: x.clone(),
            output: out.clone(),
        };
        Ok((out, cache))
    }

    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        grad_out: &FeatureMap<T>,
    ) -> Result<(FeatureMap<T>, ConvGrads<T>)> {
        let x = &cache.input;
        let (h, w, _, s) = x.dims();
        let (oh, ow, cout, so) = grad_out.dims();
        if grad_out.dims() != cache.output.dims() {
            return Err(Error::dim("conv grad_out shape mismatch"));
        }
        let (kh, kw) = (self.kernels.shape()[0], self.kernels.shape()[1]);
        let cin = self.in_channels();
        let mut dk = Tensor::zeros(self.kernels.shape());
        let mut db = vec![T::zero(); cout];
        let mut dx = FeatureMap::zeros(h, w, cin, s);
        let kd = self.kernels.data();
        let od = cache.output.tensor().data();
        let god = grad_out.tensor().data();
        let xd = x.tensor().data();
        let mut gvec = vec![T::zero(); cout];
        for b in 0..so.min(s) {
            for oi in 0..oh {
                for oj in 0..ow {
                    let obase = grad_out.offset(oi, oj, 0, b);
                    // relu subgradient: pass where the activation is positive
                    let mut any = false;
                    for (n, g) in gvec.iter_mut().enumerate() {
                        let idx = obase + n * s;
                        *g = if od[idx] > T::zero() {
                            god[idx]
                        } else {
                            T::zero()
                        };
                        if *g != T::zero() {
                            db[n] += *g;
                            any = true;
                        }
                    }
                    if !any {
                        continue;
                    }
                    for u in 0..kh {
                        let ii = (oi * self.stride + u) as isize - self.pad as isize;
                        if ii < 0 || ii as usize >= h {
                            continue;
                        }
                        for v in 0..kw {
                            let jj = (oj * self.stride + v) as isize - self.pad as isize;
                            if jj < 0 || jj as usize >= w {
                                continue;
                            }
                            let xbase = x.offset(ii as usize, jj as usize, 0, b);
                            let dkd = dk.data_mut();
                            let dxd = dx.tensor_mut().data_mut();
                            for m in 0..cin {
                                let kbase = ((u * kw + v) * cin + m) * cout;
                                let xv = xd[xbase + m * s];
                                if xv != T::zero() {
                                    let dkrow = &mut dkd[kbase..kbase + cout];
                                    for (d, &g) in dkrow.iter_mut().zip(&gvec) {
                                        *d += g * xv;
                                    }
                                }
                                let krow = &kd[kbase..kbase + cout];
                                let mut acc = T::zero();
                                for (&kv, &g) in krow.iter().zip(&gvec) {
                                    acc += g * kv;
                                }
                                dxd[xbase + m * s] += acc;
                            }
                        }
                    }
                }
            }
        }
        Ok((
            dx,
            ConvGrads {
                kernels: dk,
                bias: db,
            },
        ))
    }
}

/// Local response normalization across channels with the constants
/// alpha=2, beta=1e-4, gamma=3/4, sigma=5/2 by default.
#[derive(Debug, Clone)]
pub struct LrnLayer<T: Scalar = f32> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    pub sigma: f64,
}

impl<T: Scalar> Default for LrnLayer<T> {
    fn default() -> Self {
        LrnLayer {
            alpha: T::from_f64(2.0),
            beta: T::from_f64(1e-4),
            gamma: T::from_f64(0.75),
            sigma: 2.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LrnCache<T: Scalar> {
    input: FeatureMap<T>,
}

impl<T: Scalar> LrnLayer<T> {
    /// Channel window [max(0, ceil(n - sigma)), min(nc - 1, floor(n + sigma))].
    fn window(&self, n: usize, nc: usize) -> (usize, usize) {
        let lo = (n as f64 - self.sigma).ceil().max(0.0) as usize;
        let hi = ((n as f64 + self.sigma).floor() as usize).min(nc - 1);
        (lo, hi)
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> (FeatureMap<T>, LrnCache<T>) {
        let (h, w, nc, s) = x.dims();
        let mut out = FeatureMap::zeros(h, w, nc, s);
        for b in 0..s {
            for i in 0..h {
                for j in 0..w {
                    for n in 0..nc {
                        let (lo, hi) = self.window(n, nc);
                        let mut sum = T::zero();
                        for k in lo..=hi {
                            let v = x.at(i, j, k, b);
                            sum += v * v;
                        }
                        let denom = (self.alpha + self.beta * sum).powf(self.gamma);
                        out.set(i, j, n, b, x.at(i, j, n, b) / denom);
                    }
                }
            }
        }
        (out, LrnCache { input: x.clone() })
    }

    pub fn backward(
        &self,
        cache: &LrnCache<T>,
        grad_out: &FeatureMap<T>,
    ) -> Result<FeatureMap<T>> {
        let x = &cache.input;
        let (h, w, nc, s) = x.dims();
        if grad_out.dims() != x.dims() {
            return Err(Error::dim("lrn grad_out shape mismatch"));
        }
        let mut dx = FeatureMap::zeros(h, w, nc, s);
        let one = T::one();
        let two = T::from_f64(2.0);
        for b in 0..s {
            for i in 0..h {
                for j in 0..w {
                    // d_n = alpha + beta * S_n; y_n = x_n * d_n^-gamma
                    let mut dpow = vec![T::zero(); nc]; // d_n^-gamma
                    let mut tfac = vec![T::zero(); nc]; // g_n * x_n * d_n^(-gamma-1)
                    for n in 0..nc {
                        let (lo, hi) = self.window(n, nc);
                        let mut sum = T::zero();
                        for k in lo..=hi {
                            let v = x.at(i, j, k, b);
                            sum += v * v;
                        }
                        let d = self.alpha + self.beta * sum;
                        dpow[n] = d.powf(-self.gamma);
                        tfac[n] = grad_out.at(i, j, n, b) * x.at(i, j, n, b)
                            * d.powf(-self.gamma - one);
                    }
                    for m in 0..nc {
                        let (lo, hi) = self.window(m, nc);
                        let mut cross = T::zero();
                        // m is in window(n) exactly when n is in window(m)
                        for n in lo..=hi {
                            cross += tfac[n];
                        }
                        let g = grad_out.at(i, j, m, b) * dpow[m]
                            - two * self.beta * self.gamma * x.at(i, j, m, b) * cross;
                        dx.set(i, j, m, b, g);
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Average sub-sampling over non-overlapping T x T windows with a learned
/// per-channel scale and bias: (gain / T^2) * sum(window) + bias.
#[derive(Debug, Clone)]
pub struct SubSampleLayer<T: Scalar = f32> {
    pub window: usize,
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct SubSampleCache<T: Scalar> {
    input: FeatureMap<T>,
}

#[derive(Debug, Clone)]
pub struct SubSampleGrads<T: Scalar> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> SubSampleLayer<T> {
    pub fn with_identity(window: usize, channels: usize) -> Self {
        SubSampleLayer {
            window,
            gain: vec![T::one(); channels],
            bias: vec![T::zero(); channels],
        }
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, SubSampleCache<T>)> {
        let (h, w, nc, s) = x.dims();
        let t = self.window;
        if h < t || w < t {
            return Err(Error::dim(format!(
                "sub-sample window {} exceeds input extents {}x{}",
                t, h, w
            )));
        }
        if nc != self.gain.len() {
            return Err(Error::dim("sub-sample channel count mismatch"));
        }
        let (oh, ow) = (h / t, w / t);
        let area = T::from_f64((t * t) as f64);
        let mut out = FeatureMap::zeros(oh, ow, nc, s);
        for b in 0..s {
            for oi in 0..oh {
                for oj in 0..ow {
                    for n in 0..nc {
                        let mut sum = T::zero();
                        for u in 0..t {
                            for v in 0..t {
                                sum += x.at(oi * t + u, oj * t + v, n, b);
                            }
                        }
                        out.set(oi, oj, n, b, self.gain[n] / area * sum + self.bias[n]);
                    }
                }
            }
        }
        Ok((out, SubSampleCache { input: x.clone() }))
    }

    pub fn backward(
        &self,
        cache: &SubSampleCache<T>,
        grad_out: &FeatureMap<T>,
    ) -> Result<(FeatureMap<T>, SubSampleGrads<T>)> {
        let x = &cache.input;
        let (h, w, nc, s) = x.dims();
        let t = self.window;
        let (oh, ow) = (h / t, w / t);
        if grad_out.dims() != (oh, ow, nc, s) {
            return Err(Error::dim("sub-sample grad_out shape mismatch"));
        }
        let area = T::from_f64((t * t) as f64);
        let mut dx = FeatureMap::zeros(h, w, nc, s);
        let mut dgain = vec![T::zero(); nc];
        let mut dbias = vec![T::zero(); nc];
        for b in 0..s {
            for oi in 0..oh {
                for oj in 0..ow {
                    for n in 0..nc {
                        let g = grad_out.at(oi, oj, n, b);
                        let mut sum = T::zero();
                        for u in 0..t {
                            for v in 0..t {
                                sum += x.at(oi * t + u, oj * t + v, n, b);
                                let prev = dx.at(oi * t + u, oj * t + v, n, b);
                                dx.set(oi * t + u, oj * t + v, n, b, prev + g * self.gain[n] / area);
                            }
                        }
                        dgain[n] += g * sum / area;
                        dbias[n] += g;
                    }
                }
            }
        }
        Ok((
            dx,
            SubSampleGrads {
                gain: dgain,
                bias: dbias,
            },
        ))
    }
}

/// Fully connected layer on (batch, features) matrices. Hidden layers
/// apply ReLU; the logits layer does not.
#[derive(Debug, Clone)]
pub struct FcLayer<T: Scalar = f32> {
    /// (fan_in, fan_out)
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub relu: bool,
}

#[derive(Debug, Clone)]
pub struct FcCache<T: Scalar> {
    input: Tensor<T>,
    output: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct FcGrads<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> FcLayer<T> {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// x: (batch, fan_in) -> (batch, fan_out)
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, FcCache<T>)> {
        if x.rank() != 2 || x.shape()[1] != self.fan_in() {
            return Err(Error::dim(format!(
                "fc expects (batch, {}), got {:?}",
                self.fan_in(),
                x.shape()
            )));
        }
        let mut y = crate::tensor::matmul(x, &self.weight)?;
        let (batch, fo) = (y.shape()[0], y.shape()[1]);
        for b in 0..batch {
            for o in 0..fo {
                let idx = b * fo + o;
                y.data_mut()[idx] += self.bias[o];
            }
        }
        if self.relu {
            y = y.relu();
        }
        let cache = FcCache {
            input: x.clone(),
            output: y.clone(),
        };
        Ok((y, cache))
    }

    pub fn backward(
        &self,
        cache: &FcCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, FcGrads<T>)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::dim("fc grad_out shape mismatch"));
        }
        let (batch, fo) = (grad_out.shape()[0], grad_out.shape()[1]);
        let fi = self.fan_in();
        let mut g = grad_out.clone();
        if self.relu {
            for (gv, &ov) in g.data_mut().iter_mut().zip(cache.output.data()) {
                if ov <= T::zero() {
                    *gv = T::zero();
                }
            }
        }
        let mut dw = Tensor::zeros(&[fi, fo]);
        let mut db = vec![T::zero(); fo];
        let mut dx = Tensor::zeros(&[batch, fi]);
        let xd = cache.input.data();
        let gd = g.data();
        let wd = self.weight.data();
        for b in 0..batch {
            for i in 0..fi {
                let xv = xd[b * fi + i];
                let dwrow = &mut dw.data_mut()[i * fo..(i + 1) * fo];
                let grow = &gd[b * fo..(b + 1) * fo];
                let mut acc = T::zero();
                for o in 0..fo {
                    dwrow[o] += xv * grow[o];
                    acc += grow[o] * wd[i * fo + o];
                }
                dx.data_mut()[b * fi + i] = acc;
            }
            for o in 0..fo {
                db[o] += gd[b * fo + o];
            }
        }
        Ok((
            dx,
            FcGrads {
                weight: dw,
                bias: db,
            },
        ))
    }
}

/// Spatial max pooling, used for descriptor pooling and optional
/// architecture variants.
#[derive(Debug, Clone)]
pub struct MaxPoolLayer {
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    input_dims: (usize, usize, usize, usize),
    /// flat input offset of the winning cell, per output cell
    argmax: Vec<usize>,
}

impl MaxPoolLayer {
    pub fn out_extents(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.window || w < self.window {
            return Err(Error::dim(format!(
                "max-pool window {} exceeds input extents {}x{}",
                self.window, h, w
            )));
        }
        Ok((
            (h - self.window) / self.stride + 1,
            (w - self.window) / self.stride + 1,
        ))
    }

    pub fn forward<T: Scalar>(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, MaxPoolCache)> {
        let (h, w, nc, s) = x.dims();
        let (oh, ow) = self.out_extents(h, w)?;
        let mut out = FeatureMap::zeros(oh, ow, nc, s);
        let mut argmax = vec![0usize; oh * ow * nc * s];
        for b in 0..s {
            for oi in 0..oh {
                for oj in 0..ow {
                    for n in 0..nc {
                        let mut best = T::neg_infinity();
                        let mut besto = 0usize;
                        for u in 0..self.window {
                            for v in 0..self.window {
                                let off =
                                    x.offset(oi * self.stride + u, oj * self.stride + v, n, b);
                                let val = x.tensor().data()[off];
                                if val > best {
                                    best = val;
                                    besto = off;
                                }
                            }
                        }
                        out.set(oi, oj, n, b, best);
                        argmax[out.offset(oi, oj, n, b)] = besto;
                    }
                }
            }
        }
        Ok((
            out,
            MaxPoolCache {
                input_dims: (h, w, nc, s),
                argmax,
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        cache: &MaxPoolCache,
        grad_out: &FeatureMap<T>,
    ) -> Result<FeatureMap<T>> {
        let (h, w, nc, s) = cache.input_dims;
        if grad_out.tensor().len() != cache.argmax.len() {
            return Err(Error::dim("max-pool grad_out shape mismatch"));
        }
        let mut dx = FeatureMap::zeros(h, w, nc, s);
        for (i, &src) in cache.argmax.iter().enumerate() {
            dx.tensor_mut().data_mut()[src] += grad_out.tensor().data()[i];
        }
        Ok(dx)
    }
}

/// Numerically stabilized softmax cross-entropy for one sample.
/// Returns the loss and the gradient with respect to the logits.
pub fn softmax_xent<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::Index(format!(
            "label {} out of range for {} logits",
            label,
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().cloned().sum();
    let mut grad: Vec<T> = exps.iter().map(|&e| e / sum).collect();
    let loss = -(grad[label].ln());
    grad[label] -= T::one();
    Ok((loss, grad))
}
