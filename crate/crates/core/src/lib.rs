//! Numerical core for saliency and semantic-parsing guided person
//! re-identification.
//!
//! Everything in this crate is pure computation over owned buffers: the
//! guided feature joins, the two training objectives, ranked retrieval with
//! mAP/CMC scoring, k-reciprocal re-ranking, and a small convolutional
//! backbone with its two-stream training loop. File formats and the command
//! line live in the `sspreid` companion crate.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. The `std` feature only enables data-parallel per-sample work in
//! the trainer; results are identical either way.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bench;
pub mod error;
pub mod fusion;
pub mod guidance;
pub mod losses;
pub mod model;
pub mod real;
pub mod rerank;
pub mod retrieval;
pub mod tensor;

pub use error::{Error, Result};
pub use fusion::{
    l2_normalize, parsing_join, saliency_join, ssp_combine, stream_output, StreamOutput,
};
pub use guidance::{BodyLayout, GuidanceMap, ParsingMaps, Rect, Region};
pub use losses::{cross_entropy_lsr, lsr_target, triplet_hard, LabelDistribution, TripletBatch};
pub use real::Real;
pub use rerank::{rerank, RerankConfig, Reranked};
pub use retrieval::{
    average_precision, distance_matrix, evaluate, evaluate_distances, rank, DistanceMatrix,
    EvalReport, GalleryEntry, Protocol, RankedList,
};
pub use tensor::{bilinear_resize, channel_weight, concat, global_avg_pool, Tensor};
