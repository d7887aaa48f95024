//! Convolution and dense layers over HWC tensors with explicit backward passes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::real::Real;
use crate::tensor::Tensor;

/// Square-kernel 2-D convolution with zero padding.
///
/// Weights are laid out `[out][ky][kx][in]` so one output channel's kernel is a
/// contiguous im2col row.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    /// He-uniform initialisation, zero bias.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = libm::sqrt(6.0 / fan_in);
        let weight = (0..out_channels * kernel * kernel * in_channels)
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            weight,
            bias: vec![T::zero(); out_channels],
        }
    }

    #[inline]
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(height), f(width))
    }

    fn gather(&self, x: &Tensor<T>, oy: usize, ox: usize, patch: &mut [T]) {
        let c = self.in_channels;
        let mut at = 0;
        for ky in 0..self.kernel {
            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
            for kx in 0..self.kernel {
                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                let dst = &mut patch[at..at + c];
                if iy >= 0 && ix >= 0 && (iy as usize) < x.height() && (ix as usize) < x.width() {
                    dst.copy_from_slice(x.pixel(iy as usize, ix as usize));
                } else {
                    dst.fill(T::zero());
                }
                at += c;
            }
        }
    }

    fn scatter_add(&self, grad: &mut Tensor<T>, oy: usize, ox: usize, patch: &[T]) {
        let c = self.in_channels;
        let (h, w) = (grad.height(), grad.width());
        let mut at = 0;
        for ky in 0..self.kernel {
            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
            for kx in 0..self.kernel {
                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                    let base = ((iy as usize) * w + ix as usize) * c;
                    for (g, p) in grad.data_mut()[base..base + c]
                        .iter_mut()
                        .zip(&patch[at..at + c])
                    {
                        *g += *p;
                    }
                }
                at += c;
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.channels(), self.in_channels);
        let (oh, ow) = self.output_size(x.height(), x.width());
        let plen = self.patch_len();
        let mut patch = vec![T::zero(); plen];
        let mut out = Vec::with_capacity(oh * ow * self.out_channels);
        for oy in 0..oh {
            for ox in 0..ow {
                self.gather(x, oy, ox, &mut patch);
                for (kernel, &b) in self.weight.chunks_exact(plen).zip(&self.bias) {
                    let mut acc = b;
                    for (w, p) in kernel.iter().zip(&patch) {
                        acc += *w * *p;
                    }
                    out.push(acc);
                }
            }
        }
        Tensor::new(oh, ow, self.out_channels, out).expect("conv output shape")
    }

    /// Accumulates parameter gradients into `grad_w`/`grad_b` and returns the
    /// input gradient when `want_input` is set.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grad_w: &mut [T],
        grad_b: &mut [T],
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let plen = self.patch_len();
        let mut patch = vec![T::zero(); plen];
        let mut gpatch = vec![T::zero(); plen];
        let mut grad_in = want_input.then(|| Tensor::zeros(x.height(), x.width(), x.channels()));
        for oy in 0..grad_out.height() {
            for ox in 0..grad_out.width() {
                let g = grad_out.pixel(oy, ox);
                if g.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                self.gather(x, oy, ox, &mut patch);
                if want_input {
                    gpatch.fill(T::zero());
                }
                for (oc, &go) in g.iter().enumerate() {
                    if go == T::zero() {
                        continue;
                    }
                    grad_b[oc] += go;
                    let gw = &mut grad_w[oc * plen..(oc + 1) * plen];
                    for (acc, p) in gw.iter_mut().zip(&patch) {
                        *acc += go * *p;
                    }
                    if want_input {
                        let kernel = &self.weight[oc * plen..(oc + 1) * plen];
                        for (acc, w) in gpatch.iter_mut().zip(kernel) {
                            *acc += go * *w;
                        }
                    }
                }
                if let Some(gi) = grad_in.as_mut() {
                    self.scatter_add(gi, oy, ox, &gpatch);
                }
            }
        }
        grad_in
    }
}

/// Fully connected layer, weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = libm::sqrt(1.0 / in_dim as f64);
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim)
                .map(|_| T::lit(rng.gen_range(-bound..bound)))
                .collect(),
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| {
                let mut acc = b;
                for (w, v) in row.iter().zip(x) {
                    acc += *w * *v;
                }
                acc
            })
            .collect()
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&self, x: &[T], grad_out: &[T], grad_w: &mut [T], grad_b: &mut [T]) -> Vec<T> {
        let mut grad_in = vec![T::zero(); self.in_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            grad_b[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let gw = &mut grad_w[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                gw[i] += g * x[i];
                grad_in[i] += g * row[i];
            }
        }
        grad_in
    }
}

/// Rectifier that lets NaN through, so corrupt inputs surface as a
/// non-finite loss instead of vanishing.
pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

/// Gradient through ReLU given its pre-activation.
pub fn relu_backward<T: Real>(pre: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = pre
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&z, &g)| if z > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(pre.height(), pre.width(), pre.channels(), data).expect("same shape")
}
