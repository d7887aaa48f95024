//! Dense `height x width x channels` tensors and the three spatial kernels
//! used by the guided joins, each paired with its adjoint for backprop.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::guidance::MapView;
use crate::real::Real;

/// Flat embedding vector.
pub type FeatureVector<T> = Vec<T>;

/// Row-major `(height, width, channel)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(alloc::format!(
                "tensor dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(alloc::format!(
                "tensor data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty tensor");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: T) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    /// Values of one spatial location across all channels.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let start = self.index(row, col, 0);
        &self.data[start..start + self.channels]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.to_wide())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Source sample for one output coordinate along an axis.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Align-corners sampling table: output `i` reads source `i*(n_in-1)/(n_out-1)`.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    (0..n_out)
        .map(|i| {
            let src = if n_out > 1 {
                (i * (n_in - 1)) as f64 / (n_out - 1) as f64
            } else {
                0.0
            };
            let lo = (libm::floor(src) as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize with align-corners sampling.
pub fn bilinear_resize<T: Real>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(alloc::format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    let c = t.channels;
    let rows = axis_taps(t.height, out_h);
    let cols = axis_taps(t.width, out_w);
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for ry in &rows {
        let fy = T::lit(ry.frac);
        let gy = T::one() - fy;
        for rx in &cols {
            let fx = T::lit(rx.frac);
            let gx = T::one() - fx;
            let p00 = t.pixel(ry.lo, rx.lo);
            let p01 = t.pixel(ry.lo, rx.hi);
            let p10 = t.pixel(ry.hi, rx.lo);
            let p11 = t.pixel(ry.hi, rx.hi);
            for k in 0..c {
                let top = p00[k] * gx + p01[k] * fx;
                let bottom = p10[k] * gx + p11[k] * fx;
                out.push(top * gy + bottom * fy);
            }
        }
    }
    Tensor::new(out_h, out_w, c, out)
}

/// Adjoint of [`bilinear_resize`]: scatters an output gradient back onto the
/// `in_h x in_w` source grid.
pub fn bilinear_resize_backward<T: Real>(
    grad_out: &Tensor<T>,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor<T>> {
    if in_h == 0 || in_w == 0 {
        return Err(Error::invalid("resize source must be positive"));
    }
    let c = grad_out.channels;
    let rows = axis_taps(in_h, grad_out.height);
    let cols = axis_taps(in_w, grad_out.width);
    let mut grad = Tensor::zeros(in_h, in_w, c);
    for (i, ry) in rows.iter().enumerate() {
        let fy = T::lit(ry.frac);
        let gy = T::one() - fy;
        for (j, rx) in cols.iter().enumerate() {
            let fx = T::lit(rx.frac);
            let gx = T::one() - fx;
            let src = grad_out.index(i, j, 0);
            let corners = [
                (ry.lo, rx.lo, gy * gx),
                (ry.lo, rx.hi, gy * fx),
                (ry.hi, rx.lo, fy * gx),
                (ry.hi, rx.hi, fy * fx),
            ];
            for (r, q, w) in corners {
                if w == T::zero() {
                    continue;
                }
                let dst = grad.index(r, q, 0);
                for k in 0..c {
                    let g = grad_out.data[src + k] * w;
                    grad.data[dst + k] += g;
                }
            }
        }
    }
    Ok(grad)
}

/// Multiplies every channel of `t` by the spatial map. Self-adjoint in `t`.
///
/// Accepts a [`GuidanceMap`](crate::GuidanceMap) or an unconstrained
/// [`MapView`] of arbitrary real weights.
pub fn channel_weight<'a, T: Real>(
    t: &Tensor<T>,
    map: impl Into<MapView<'a>>,
) -> Result<Tensor<T>> {
    let map = map.into();
    if t.height != map.height || t.width != map.width {
        return Err(Error::invalid(alloc::format!(
            "tensor {}x{} does not match map {}x{}",
            t.height,
            t.width,
            map.height,
            map.width
        )));
    }
    let c = t.channels;
    let mut data = Vec::with_capacity(t.data.len());
    for (pixel, &w) in t.data.chunks_exact(c).zip(map.weights) {
        let w = T::lit(w as f64);
        data.extend(pixel.iter().map(|&v| v * w));
    }
    Tensor::new(t.height, t.width, c, data)
}

/// Spatial mean per channel, accumulated in `f64`.
pub fn global_avg_pool<T: Real>(t: &Tensor<T>) -> FeatureVector<T> {
    let c = t.channels;
    let mut sums = vec![0.0f64; c];
    for pixel in t.data.chunks_exact(c) {
        for (s, v) in sums.iter_mut().zip(pixel) {
            *s += v.to_wide();
        }
    }
    let n = (t.height * t.width) as f64;
    sums.into_iter().map(|s| T::lit(s / n)).collect()
}

/// Adjoint of [`global_avg_pool`].
pub fn global_avg_pool_backward<T: Real>(grad: &[T], height: usize, width: usize) -> Tensor<T> {
    let c = grad.len();
    let inv = T::lit(1.0 / (height * width) as f64);
    let scaled: Vec<T> = grad.iter().map(|&g| g * inv).collect();
    let mut data = Vec::with_capacity(height * width * c);
    for _ in 0..height * width {
        data.extend_from_slice(&scaled);
    }
    Tensor {
        height,
        width,
        channels: c,
        data,
    }
}

pub fn concat<T: Clone>(a: &[T], b: &[T]) -> FeatureVector<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}
