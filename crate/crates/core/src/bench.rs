//! Synthetic clustered embeddings for exercising retrieval and re-ranking.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::retrieval::GalleryEntry;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub identities: usize,
    pub queries_per_id: usize,
    pub gallery_per_id: usize,
    pub dim: usize,
    /// Per-coordinate spread of members around their identity centre.
    pub spread: f64,
    /// Near-duplicate distractors: each copies a query (up to `distractor_noise`)
    /// but carries a different identity.
    pub distractors: usize,
    pub distractor_noise: f64,
    pub seed: u64,
}

impl ClusterConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            identities: 5,
            queries_per_id: 4,
            gallery_per_id: 12,
            dim: 16,
            spread: 0.7,
            distractors: 5,
            distractor_noise: 0.05,
            seed,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Queries on camera 0, gallery on camera 1. Identity centres are unit-scale
/// Gaussian; members add isotropic Gaussian noise of the configured spread.
pub fn clustered_gallery(cfg: &ClusterConfig) -> (Vec<GalleryEntry<f32>>, Vec<GalleryEntry<f32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centres: Vec<Vec<f64>> = (0..cfg.identities)
        .map(|_| {
            (0..cfg.dim)
                .map(|_| gaussian(&mut rng) / libm::sqrt(2.0))
                .collect()
        })
        .collect();
    let sample = |c: &[f64], spread: f64, rng: &mut ChaCha8Rng| -> Vec<f32> {
        c.iter()
            .map(|&x| (x + spread * gaussian(rng)) as f32)
            .collect()
    };
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for (pid, c) in centres.iter().enumerate() {
        for _ in 0..cfg.queries_per_id {
            queries.push(GalleryEntry::new(
                pid as u32,
                0,
                sample(c, cfg.spread, &mut rng),
            ));
        }
        for _ in 0..cfg.gallery_per_id {
            gallery.push(GalleryEntry::new(
                pid as u32,
                1,
                sample(c, cfg.spread, &mut rng),
            ));
        }
    }
    for k in 0..cfg.distractors.min(queries.len()) {
        let q = &queries[(k * queries.len()) / cfg.distractors.max(1)];
        let other =
            (q.person_id as usize + 1 + rng.gen_range(0..cfg.identities - 1)) % cfg.identities;
        let base: Vec<f64> = q.feature.iter().map(|&v| v as f64).collect();
        let feature = sample(&base, cfg.distractor_noise, &mut rng);
        gallery.push(GalleryEntry::new(other as u32, 1, feature));
    }
    (queries, gallery)
}
