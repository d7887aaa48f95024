//! k-reciprocal nearest-neighbour re-ranking with Jaccard distance.
//!
//! Follows the widely used formulation: squared distances over the joint
//! query+gallery set are normalised per row, k-reciprocal neighbour sets are
//! expanded with half-size reciprocal sets of their members, memberships are
//! Gaussian-weighted, averaged over the `k2` nearest neighbours (local query
//! expansion) and compared with a min/max Jaccard distance. The result blends
//! the normalised original distance with weight `lambda`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::retrieval::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankConfig {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k2 == 0 || self.k2 > self.k1 {
            return Err(Error::invalid(format!(
                "re-ranking needs k1 >= k2 >= 1, got k1={} k2={}",
                self.k1, self.k2
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Reranked {
    /// Final `queries x gallery` distances.
    pub distances: DistanceMatrix,
    /// Parameters actually used after clamping.
    pub k1: usize,
    pub k2: usize,
    pub warnings: Vec<String>,
}

/// Round half to even, matching the reference implementation's rounding of `k1 / 2`.
fn half_k(k1: usize) -> usize {
    libm::rint(k1 as f64 / 2.0) as usize
}

/// Re-ranks the query/gallery distances.
///
/// `k1` is clamped to `gallery_len - 1` (with a warning) on small galleries;
/// a gallery no larger than `k2` is an error.
pub fn rerank<T: Real, V: AsRef<[T]>>(
    queries: &[V],
    gallery: &[V],
    cfg: &RerankConfig,
) -> Result<Reranked> {
    cfg.validate()?;
    let nq = queries.len();
    let ng = gallery.len();
    if ng <= cfg.k2 {
        return Err(Error::invalid(format!(
            "gallery of {ng} entries is too small for k2={}",
            cfg.k2
        )));
    }
    let mut warnings = Vec::new();
    let k1 = if ng <= cfg.k1 {
        let k1 = ng - 1;
        warnings.push(format!(
            "gallery of {ng} entries is too small for k1={}; using k1={k1}",
            cfg.k1
        ));
        k1
    } else {
        cfg.k1
    };
    let k2 = cfg.k2;

    let all: Vec<&[T]> = queries
        .iter()
        .map(AsRef::as_ref)
        .chain(gallery.iter().map(AsRef::as_ref))
        .collect();
    let n = all.len();
    let dim = all.first().map_or(0, |v| v.len());
    if all.iter().any(|v| v.len() != dim) {
        return Err(Error::invalid("feature dimension mismatch"));
    }

    // Squared distances, each row scaled by its maximum.
    let mut original = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = all[i]
                .iter()
                .zip(all[j])
                .map(|(a, b)| {
                    let t = a.to_wide() - b.to_wide();
                    t * t
                })
                .sum();
            original[i * n + j] = d;
            original[j * n + i] = d;
        }
    }
    for row in original.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            row.iter_mut().for_each(|v| *v /= max);
        }
    }

    let initial_rank: Vec<Vec<usize>> = original
        .chunks_exact(n)
        .map(|row| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let reciprocal = |i: usize, k: usize| -> Vec<usize> {
        initial_rank[i][..=k]
            .iter()
            .copied()
            .filter(|&c| initial_rank[c][..=k].contains(&i))
            .collect()
    };

    let mut v = vec![0.0f64; n * n];
    let hk = half_k(k1);
    for i in 0..n {
        let k_reciprocal = reciprocal(i, k1);
        let mut expansion = k_reciprocal.clone();
        for &candidate in &k_reciprocal {
            let cand_set = reciprocal(candidate, hk);
            let shared = cand_set.iter().filter(|c| k_reciprocal.contains(c)).count();
            if shared as f64 > 2.0 / 3.0 * cand_set.len() as f64 {
                expansion.extend_from_slice(&cand_set);
            }
        }
        expansion.sort_unstable();
        expansion.dedup();
        let row = &original[i * n..(i + 1) * n];
        let weights: Vec<f64> = expansion.iter().map(|&j| libm::exp(-row[j])).collect();
        let total: f64 = weights.iter().sum();
        for (&j, w) in expansion.iter().zip(weights) {
            v[i * n + j] = w / total;
        }
    }

    if k2 != 1 {
        let mut expanded = vec![0.0f64; n * n];
        for i in 0..n {
            let out = &mut expanded[i * n..(i + 1) * n];
            for &nb in &initial_rank[i][..k2] {
                for (o, x) in out.iter_mut().zip(&v[nb * n..(nb + 1) * n]) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= k2 as f64);
        }
        v = expanded;
    }

    // Inverted index: for each column, the rows with non-zero membership.
    let mut inverted: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if v[i * n + j] != 0.0 {
                inverted[j].push(i);
            }
        }
    }

    let mut out = Vec::with_capacity(nq * ng);
    let mut overlap = vec![0.0f64; n];
    for i in 0..nq {
        overlap.iter_mut().for_each(|t| *t = 0.0);
        for k in 0..n {
            let vik = v[i * n + k];
            if vik == 0.0 {
                continue;
            }
            for &j in &inverted[k] {
                overlap[j] += vik.min(v[j * n + k]);
            }
        }
        for j in 0..ng {
            // membership rows sum to 1, so the overlap cannot exceed 1 beyond rounding
            let t = overlap[nq + j].min(1.0);
            let jaccard = 1.0 - t / (2.0 - t);
            let orig = original[i * n + nq + j];
            out.push(jaccard * (1.0 - cfg.lambda) + orig * cfg.lambda);
        }
    }

    Ok(Reranked {
        distances: DistanceMatrix::new(nq, ng, out)?,
        k1,
        k2,
        warnings,
    })
}

/// The Jaccard component alone (`lambda = 0`), exposed for inspection.
pub fn jaccard_distances<T: Real, V: AsRef<[T]>>(
    queries: &[V],
    gallery: &[V],
    cfg: &RerankConfig,
) -> Result<DistanceMatrix> {
    let cfg = RerankConfig {
        lambda: 0.0,
        ..*cfg
    };
    Ok(rerank(queries, gallery, &cfg)?.distances)
}
