//! Desk-scale trainable model: a small strided CNN whose intermediate tap
//! feeds the guided join, trained per stream with the re-identification losses.

pub mod backbone;
pub mod layers;
pub mod optim;
pub mod synth;
pub mod train;

pub use backbone::{
    BackboneConfig, Gradients, Guides, StreamForward, StreamKind, StreamModel, ToyBackbone,
};
pub use layers::{Conv2d, Linear};
pub use synth::{synth_dataset, Dataset, Sample, Split, SynthConfig};
pub use train::{
    batch_objective, train_stream, BatchItem, EpochLoss, LossMode, Objective, TrainConfig,
};
