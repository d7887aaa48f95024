//! Guided feature joins and the stream/framework combination rules.
//!
//! A join resizes an intermediate tensor to the map's resolution, weights
//! every channel by the map and average-pools to a vector. Within a stream
//! the global and guided vectors are L2-normalised and concatenated; the two
//! streams are combined the same way, so squared distances between combined
//! embeddings decompose into per-stream squared distances.

use alloc::vec::Vec;

use crate::error::Result;
use crate::guidance::{GuidanceMap, ParsingMaps};
use crate::real::Real;
use crate::tensor::{
    bilinear_resize, bilinear_resize_backward, channel_weight, concat, global_avg_pool,
    global_avg_pool_backward, FeatureVector, Tensor,
};

/// Saliency join: a `c`-dimensional vector.
pub fn saliency_join<T: Real>(tau: &Tensor<T>, map: &GuidanceMap) -> Result<FeatureVector<T>> {
    let resized = bilinear_resize(tau, map.height(), map.width())?;
    let weighted = channel_weight(&resized, map)?;
    Ok(global_avg_pool(&weighted))
}

/// Gradient of [`saliency_join`] with respect to `tau` (the map is constant).
pub fn saliency_join_backward<T: Real>(
    tau_height: usize,
    tau_width: usize,
    map: &GuidanceMap,
    grad_out: &[T],
) -> Result<Tensor<T>> {
    let pooled = global_avg_pool_backward(grad_out, map.height(), map.width());
    let weighted = channel_weight(&pooled, map)?;
    bilinear_resize_backward(&weighted, tau_height, tau_width)
}

/// Parsing join: per-region saliency joins concatenated in region order (`5c`).
pub fn parsing_join<T: Real>(tau: &Tensor<T>, maps: &ParsingMaps) -> Result<FeatureVector<T>> {
    // Every region shares one shape, so the resize is done once.
    let resized = bilinear_resize(tau, maps.height(), maps.width())?;
    let mut out = Vec::with_capacity(5 * tau.channels());
    for region in maps.regions() {
        out.extend(global_avg_pool(&channel_weight(&resized, region)?));
    }
    Ok(out)
}

pub fn parsing_join_backward<T: Real>(
    tau_height: usize,
    tau_width: usize,
    maps: &ParsingMaps,
    grad_out: &[T],
) -> Result<Tensor<T>> {
    let c = grad_out.len() / maps.regions().len();
    let (h, w) = (maps.height(), maps.width());
    let mut acc = Tensor::zeros(h, w, c);
    for (region, g) in maps.regions().iter().zip(grad_out.chunks_exact(c)) {
        let part = channel_weight(&global_avg_pool_backward(g, h, w), region)?;
        for (a, p) in acc.data_mut().iter_mut().zip(part.data()) {
            *a += *p;
        }
    }
    bilinear_resize_backward(&acc, tau_height, tau_width)
}

fn norm<T: Real>(x: &[T]) -> f64 {
    libm::sqrt(x.iter().map(|v| v.to_wide() * v.to_wide()).sum::<f64>())
}

/// Unit-L2 rescaling; the zero vector is returned unchanged.
pub fn l2_normalize<T: Real>(x: &[T]) -> FeatureVector<T> {
    let n = norm(x);
    if n == 0.0 {
        return x.to_vec();
    }
    x.iter().map(|&v| T::lit(v.to_wide() / n)).collect()
}

/// Vector-Jacobian product of [`l2_normalize`] at `x`.
pub fn l2_normalize_backward<T: Real>(x: &[T], grad_out: &[T]) -> FeatureVector<T> {
    let n = norm(x);
    if n == 0.0 {
        return grad_out.to_vec();
    }
    let dot: f64 = x
        .iter()
        .zip(grad_out)
        .map(|(a, g)| a.to_wide() * g.to_wide())
        .sum();
    x.iter()
        .zip(grad_out)
        .map(|(a, g)| T::lit((g.to_wide() - a.to_wide() * dot / (n * n)) / n))
        .collect()
}

/// One stream's representation: its global and guided parts and their join.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput<T> {
    pub global: FeatureVector<T>,
    pub guided: FeatureVector<T>,
    pub combined: FeatureVector<T>,
}

pub fn stream_output<T: Real>(
    global: FeatureVector<T>,
    guided: FeatureVector<T>,
) -> StreamOutput<T> {
    let combined = concat(&l2_normalize(&global), &l2_normalize(&guided));
    StreamOutput {
        global,
        guided,
        combined,
    }
}

/// Joins the saliency-stream and parsing-stream embeddings of one image.
pub fn ssp_combine<T: Real>(s: &StreamOutput<T>, sp: &StreamOutput<T>) -> FeatureVector<T> {
    ssp_combine_vectors(&s.combined, &sp.combined)
}

/// [`ssp_combine`] on bare combined vectors (as read back from feature files).
pub fn ssp_combine_vectors<T: Real>(s: &[T], sp: &[T]) -> FeatureVector<T> {
    concat(&l2_normalize(s), &l2_normalize(sp))
}
