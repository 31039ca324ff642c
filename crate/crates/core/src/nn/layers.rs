use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::conv::{col2im, im2col, ConvGeom};
use super::params::{Grads, ParamStore};
use crate::tensor::{matmul_into, Mat, Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Normal { std: f64 },
    Uniform { limit: f64 },
    Zeros,
    Ones,
}

impl Init {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = match self {
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| T::from_f64(dist.sample(rng))).collect()
            }
            Init::Uniform { limit } => {
                let dist = Uniform::new_inclusive(-limit, limit);
                (0..n).map(|_| T::from_f64(dist.sample(rng))).collect()
            }
            Init::Zeros => vec![T::ZERO; n],
            Init::Ones => vec![T::ONE; n],
        };
        Tensor::from_vec(shape, data).expect("shape matches data")
    }
}

/// One differentiable operation. Parameter fields are indices into the
/// owning network's [`ParamStore`]s.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `[B, in] -> [B, out]`, weight `[out, in]`.
    Linear { weight: usize, bias: usize },
    /// `[C, B, H, W] -> [O, B, OH, OW]`, weight `[O, C, k, k]`.
    Conv2d {
        weight: usize,
        bias: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// `[Ci, B, H, W] -> [Co, B, OH, OW]`, weight `[Ci, Co, k, k]`.
    ConvTranspose2d {
        weight: usize,
        bias: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Per-channel normalization over everything but the leading axis.
    BatchNorm {
        gamma: usize,
        beta: usize,
        running_mean: usize,
        running_var: usize,
        momentum: f64,
    },
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    /// `[C, B, H, W] -> [B, C*H*W]`.
    Flatten,
    /// `[B, C*H*W] -> [C, B, H, W]`.
    Unflatten { c: usize, h: usize, w: usize },
}

/// Values saved by a training-mode forward pass for the backward pass.
#[derive(Debug)]
pub enum Cache<T> {
    Linear { input: Tensor<T> },
    Conv2d { cols: Vec<T>, geom: ConvGeom, out_c: usize },
    ConvTranspose2d { input: Tensor<T>, geom: ConvGeom },
    BatchNorm { xhat: Tensor<T>, inv_std: Vec<f64> },
    Relu { output: Tensor<T> },
    LeakyRelu { input: Tensor<T> },
    Tanh { output: Tensor<T> },
    Flatten { shape: Vec<usize> },
    Unflatten { batch: usize, in_features: usize },
}

/// How normalization layers behave in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Use running statistics.
    Eval,
    /// Use batch statistics; fold them into the running statistics only when
    /// `update_running` is set.
    Train { update_running: bool },
}

fn transposed_geom(out_shape_c: usize, b: usize, oh: usize, ow: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> ConvGeom {
    // The transposed convolution is the adjoint of the convolution mapping
    // the [Co, B, OH, OW] output space back onto the [Ci, B, H, W] input.
    ConvGeom {
        c: out_shape_c,
        b,
        h: oh,
        w: ow,
        oh: h,
        ow: w,
        k,
        stride,
        pad,
    }
}

impl Layer {
    pub fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        buffers: &mut BufferAccess<'_, T>,
        x: Tensor<T>,
        mode: Mode,
        record: bool,
    ) -> (Tensor<T>, Option<Cache<T>>) {
        match *self {
            Layer::Linear { weight, bias } => {
                let w = params.get(weight);
                let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
                let batch = x.dim0();
                assert_eq!(x.numel(), batch * in_f, "linear input width mismatch");
                let mut y = vec![T::ZERO; batch * out_f];
                matmul_into(
                    Mat::new(x.data(), batch, in_f),
                    Mat::new(w.data(), out_f, in_f).t(),
                    T::ZERO,
                    &mut y,
                );
                let b = params.get(bias).data();
                for row in y.chunks_exact_mut(out_f) {
                    for (v, &bb) in row.iter_mut().zip(b) {
                        *v += bb;
                    }
                }
                let y = Tensor::from_vec(&[batch, out_f], y).expect("linear output");
                (y, record.then(|| Cache::Linear { input: x }))
            }
            Layer::Conv2d {
                weight,
                bias,
                kernel,
                stride,
                pad,
            } => {
                let w = params.get(weight);
                let s = x.shape();
                assert_eq!(s.len(), 4, "conv input must be [C, B, H, W]");
                assert_eq!(s[0], w.shape()[1], "conv input channel mismatch");
                let geom = ConvGeom::conv(s[0], s[1], s[2], s[3], kernel, stride, pad);
                let out_c = w.shape()[0];
                let cols = im2col(x.data(), &geom);
                let n = geom.cols();
                let mut y = vec![T::ZERO; out_c * n];
                matmul_into(
                    Mat::new(w.data(), out_c, geom.rows()),
                    Mat::new(&cols, geom.rows(), n),
                    T::ZERO,
                    &mut y,
                );
                add_channel_bias(&mut y, params.get(bias).data());
                let y = Tensor::from_vec(&[out_c, geom.b, geom.oh, geom.ow], y).expect("conv output");
                (y, record.then(|| Cache::Conv2d { cols, geom, out_c }))
            }
            Layer::ConvTranspose2d {
                weight,
                bias,
                kernel,
                stride,
                pad,
            } => {
                let w = params.get(weight);
                let s = x.shape();
                assert_eq!(s.len(), 4, "transposed conv input must be [C, B, H, W]");
                let (in_c, out_c) = (w.shape()[0], w.shape()[1]);
                assert_eq!(s[0], in_c, "transposed conv input channel mismatch");
                let (h, wd) = (s[2], s[3]);
                let oh = (h - 1) * stride + kernel - 2 * pad;
                let ow = (wd - 1) * stride + kernel - 2 * pad;
                let geom = transposed_geom(out_c, s[1], oh, ow, h, wd, kernel, stride, pad);
                let n = geom.cols();
                let mut cols = vec![T::ZERO; geom.rows() * n];
                matmul_into(
                    Mat::new(w.data(), in_c, geom.rows()).t(),
                    Mat::new(x.data(), in_c, n),
                    T::ZERO,
                    &mut cols,
                );
                let mut y = col2im(&cols, &geom);
                add_channel_bias(&mut y, params.get(bias).data());
                let y = Tensor::from_vec(&[out_c, s[1], oh, ow], y).expect("deconv output");
                (y, record.then(|| Cache::ConvTranspose2d { input: x, geom }))
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                momentum,
            } => {
                let c = x.dim0();
                let n = x.numel() / c;
                let g = params.get(gamma).data();
                let bt = params.get(beta).data();
                let mut y = x;
                match mode {
                    Mode::Eval => {
                        let rm = buffers.get(running_mean).data().to_vec();
                        let rv = buffers.get(running_var).data().to_vec();
                        for (ch, chunk) in y.data_mut().chunks_exact_mut(n).enumerate() {
                            let inv = 1.0 / (rv[ch].to_f64() + BN_EPS).sqrt();
                            let scale = T::from_f64(g[ch].to_f64() * inv);
                            let shift = T::from_f64(bt[ch].to_f64() - rm[ch].to_f64() * g[ch].to_f64() * inv);
                            for v in chunk {
                                *v = *v * scale + shift;
                            }
                        }
                        (y, None)
                    }
                    Mode::Train { update_running } => {
                        let mut means = Vec::with_capacity(c);
                        let mut vars = Vec::with_capacity(c);
                        let mut inv_std = Vec::with_capacity(c);
                        let mut xhat = if record { Vec::with_capacity(y.numel()) } else { Vec::new() };
                        for (ch, chunk) in y.data_mut().chunks_exact_mut(n).enumerate() {
                            let mean = chunk.iter().map(|v| v.to_f64()).sum::<f64>() / n as f64;
                            let var = chunk
                                .iter()
                                .map(|v| {
                                    let d = v.to_f64() - mean;
                                    d * d
                                })
                                .sum::<f64>()
                                / n as f64;
                            let inv = 1.0 / (var + BN_EPS).sqrt();
                            let m = T::from_f64(mean);
                            let iv = T::from_f64(inv);
                            for v in chunk.iter_mut() {
                                let xh = (*v - m) * iv;
                                if record {
                                    xhat.push(xh);
                                }
                                *v = g[ch] * xh + bt[ch];
                            }
                            means.push(mean);
                            vars.push(var);
                            inv_std.push(inv);
                        }
                        if update_running {
                            let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
                            let rm = buffers.get_mut(running_mean).data_mut();
                            for (r, &m) in rm.iter_mut().zip(&means) {
                                *r = T::from_f64(momentum * r.to_f64() + (1.0 - momentum) * m);
                            }
                            let rv = buffers.get_mut(running_var).data_mut();
                            for (r, &v) in rv.iter_mut().zip(&vars) {
                                *r = T::from_f64(momentum * r.to_f64() + (1.0 - momentum) * v * unbias);
                            }
                        }
                        let shape = y.shape().to_vec();
                        let cache = record.then(|| Cache::BatchNorm {
                            xhat: Tensor::from_vec(&shape, xhat).expect("xhat"),
                            inv_std,
                        });
                        (y, cache)
                    }
                }
            }
            Layer::Relu => {
                let y = x.map(|v| if v > T::ZERO { v } else { T::ZERO });
                let cache = record.then(|| Cache::Relu { output: y.clone() });
                (y, cache)
            }
            Layer::LeakyRelu { slope } => {
                let s = T::from_f64(slope);
                let y = x.map(|v| if v > T::ZERO { v } else { v * s });
                (y, record.then(|| Cache::LeakyRelu { input: x }))
            }
            Layer::Tanh => {
                let y = x.map(Scalar::tanh);
                let cache = record.then(|| Cache::Tanh { output: y.clone() });
                (y, cache)
            }
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                assert!(shape.len() >= 2, "flatten needs a [C, B, ..] map");
                let b = shape[1];
                let y = x.swap01();
                let feat = y.numel() / b.max(1);
                let y = y.reshape(&[b, feat]).expect("flatten");
                (y, record.then(|| Cache::Flatten { shape }))
            }
            Layer::Unflatten { c, h, w } => {
                let b = x.dim0();
                let in_features = x.numel() / b.max(1);
                assert_eq!(in_features, c * h * w, "unflatten width mismatch");
                let y = x.reshape(&[b, c, h, w]).expect("unflatten").swap01();
                (y, record.then(|| Cache::Unflatten { batch: b, in_features }))
            }
        }
    }

    /// Propagates `dy` through this layer. Parameter gradients are added into
    /// `grads` when present; the input gradient is computed only when
    /// `need_input_grad` is set.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        cache: Cache<T>,
        dy: Tensor<T>,
        grads: Option<&mut Grads<T>>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        match (self, cache) {
            (&Layer::Linear { weight, bias }, Cache::Linear { input }) => {
                let w = params.get(weight);
                let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
                let batch = input.dim0();
                if let Some(grads) = grads {
                    matmul_into(
                        Mat::new(dy.data(), batch, out_f).t(),
                        Mat::new(input.data(), batch, in_f),
                        T::ONE,
                        grads[weight].data_mut(),
                    );
                    let db = grads[bias].data_mut();
                    for row in dy.data().chunks_exact(out_f) {
                        for (g, &v) in db.iter_mut().zip(row) {
                            *g += v;
                        }
                    }
                }
                need_input_grad.then(|| {
                    let mut dx = vec![T::ZERO; batch * in_f];
                    matmul_into(
                        Mat::new(dy.data(), batch, out_f),
                        Mat::new(w.data(), out_f, in_f),
                        T::ZERO,
                        &mut dx,
                    );
                    Tensor::from_vec(input.shape(), dx).expect("linear dx")
                })
            }
            (&Layer::Conv2d { weight, bias, .. }, Cache::Conv2d { cols, geom, out_c }) => {
                let w = params.get(weight);
                let n = geom.cols();
                if let Some(grads) = grads {
                    matmul_into(
                        Mat::new(dy.data(), out_c, n),
                        Mat::new(&cols, geom.rows(), n).t(),
                        T::ONE,
                        grads[weight].data_mut(),
                    );
                    accumulate_channel_sums(grads[bias].data_mut(), dy.data());
                }
                need_input_grad.then(|| {
                    let mut dcols = cols;
                    matmul_into(
                        Mat::new(w.data(), out_c, geom.rows()).t(),
                        Mat::new(dy.data(), out_c, n),
                        T::ZERO,
                        &mut dcols,
                    );
                    let dx = col2im(&dcols, &geom);
                    Tensor::from_vec(&[geom.c, geom.b, geom.h, geom.w], dx).expect("conv dx")
                })
            }
            (&Layer::ConvTranspose2d { weight, bias, .. }, Cache::ConvTranspose2d { input, geom }) => {
                let w = params.get(weight);
                let in_c = w.shape()[0];
                let n = geom.cols();
                let dcols = im2col(dy.data(), &geom);
                if let Some(grads) = grads {
                    matmul_into(
                        Mat::new(input.data(), in_c, n),
                        Mat::new(&dcols, geom.rows(), n).t(),
                        T::ONE,
                        grads[weight].data_mut(),
                    );
                    accumulate_channel_sums(grads[bias].data_mut(), dy.data());
                }
                need_input_grad.then(|| {
                    let mut dx = vec![T::ZERO; in_c * n];
                    matmul_into(
                        Mat::new(w.data(), in_c, geom.rows()),
                        Mat::new(&dcols, geom.rows(), n),
                        T::ZERO,
                        &mut dx,
                    );
                    Tensor::from_vec(input.shape(), dx).expect("deconv dx")
                })
            }
            (&Layer::BatchNorm { gamma, beta, .. }, Cache::BatchNorm { xhat, inv_std }) => {
                let c = xhat.dim0();
                let n = xhat.numel() / c;
                let g = params.get(gamma).data();
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dy_xhat = vec![0.0f64; c];
                for ch in 0..c {
                    let dyc = &dy.data()[ch * n..(ch + 1) * n];
                    let xc = &xhat.data()[ch * n..(ch + 1) * n];
                    for (&d, &xh) in dyc.iter().zip(xc) {
                        sum_dy[ch] += d.to_f64();
                        sum_dy_xhat[ch] += d.to_f64() * xh.to_f64();
                    }
                }
                if let Some(grads) = grads {
                    for ch in 0..c {
                        grads[gamma].data_mut()[ch] += T::from_f64(sum_dy_xhat[ch]);
                        grads[beta].data_mut()[ch] += T::from_f64(sum_dy[ch]);
                    }
                }
                need_input_grad.then(|| {
                    let mut dx = dy;
                    let xd = xhat.data();
                    for (ch, chunk) in dx.data_mut().chunks_exact_mut(n).enumerate() {
                        let k = g[ch].to_f64() * inv_std[ch] / n as f64;
                        let mean_dy = T::from_f64(sum_dy[ch]);
                        let mean_dyx = T::from_f64(sum_dy_xhat[ch]);
                        let scale = T::from_f64(k);
                        let nn = T::from_f64(n as f64);
                        for (i, v) in chunk.iter_mut().enumerate() {
                            *v = scale * (nn * *v - mean_dy - xd[ch * n + i] * mean_dyx);
                        }
                    }
                    dx
                })
            }
            (Layer::Relu, Cache::Relu { output }) => need_input_grad.then(|| {
                let mut dx = dy;
                for (d, &o) in dx.data_mut().iter_mut().zip(output.data()) {
                    if o <= T::ZERO {
                        *d = T::ZERO;
                    }
                }
                dx
            }),
            (&Layer::LeakyRelu { slope }, Cache::LeakyRelu { input }) => need_input_grad.then(|| {
                let s = T::from_f64(slope);
                let mut dx = dy;
                for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                    if x <= T::ZERO {
                        *d *= s;
                    }
                }
                dx
            }),
            (Layer::Tanh, Cache::Tanh { output }) => need_input_grad.then(|| {
                let mut dx = dy;
                for (d, &y) in dx.data_mut().iter_mut().zip(output.data()) {
                    *d *= T::ONE - y * y;
                }
                dx
            }),
            (Layer::Flatten, Cache::Flatten { shape }) => need_input_grad.then(|| {
                let mut swapped = shape.clone();
                swapped.swap(0, 1);
                dy.reshape(&swapped).expect("flatten dx").swap01()
            }),
            (&Layer::Unflatten { .. }, Cache::Unflatten { batch, in_features }) => need_input_grad.then(|| {
                dy.swap01().reshape(&[batch, in_features]).expect("unflatten dx")
            }),
            (layer, cache) => panic!("cache {cache:?} does not belong to layer {layer:?}"),
        }
    }
}

fn add_channel_bias<T: Scalar>(y: &mut [T], bias: &[T]) {
    let per = y.len() / bias.len().max(1);
    for (chunk, &b) in y.chunks_exact_mut(per).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn accumulate_channel_sums<T: Scalar>(dst: &mut [T], dy: &[T]) {
    let per = dy.len() / dst.len().max(1);
    for (g, chunk) in dst.iter_mut().zip(dy.chunks_exact(per)) {
        *g += T::from_f64(chunk.iter().map(|v| v.to_f64()).sum());
    }
}

/// Either read-only or mutable access to normalization buffers.
pub enum BufferAccess<'a, T> {
    Read(&'a ParamStore<T>),
    Write(&'a mut ParamStore<T>),
}

impl<T: Scalar> BufferAccess<'_, T> {
    fn get(&self, i: usize) -> &Tensor<T> {
        match self {
            BufferAccess::Read(b) => b.get(i),
            BufferAccess::Write(b) => b.get(i),
        }
    }

    fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        match self {
            BufferAccess::Read(_) => panic!("running statistics are read-only in this pass"),
            BufferAccess::Write(b) => b.get_mut(i),
        }
    }
}
