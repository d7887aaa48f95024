//! Two-stream training objective and the per-stream training loop.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{cross_entropy_lsr, triplet_hard, HardPair, Reduction, TripletBatch};
use crate::model::backbone::{Gradients, Guides, StreamForward, StreamModel};
use crate::model::optim::{step_lr, Adam};
use crate::model::synth::{epoch_batches, Dataset};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// Label-smoothed cross-entropy only.
    CrossOnly,
    /// Sum of label-smoothed cross-entropy and batch-hard triplet loss.
    CrossPlusTriplet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub batch_people: usize,
    pub images_per_person: usize,
    pub epsilon: f64,
    pub margin: f64,
    pub loss_mode: LossMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            weight_decay: 5e-4,
            lr_decay_factor: 0.1,
            lr_decay_every: 60,
            epochs: 180,
            batch_people: 8,
            images_per_person: 4,
            epsilon: 0.1,
            margin: 0.3,
            loss_mode: LossMode::CrossPlusTriplet,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.batch_people * self.images_per_person
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.lr_decay_factor];
        if positive.iter().any(|v| v.is_nan() || *v <= 0.0)
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::invalid(
                "learning rate and decay factor must be positive",
            ));
        }
        if self.batch_people == 0 || self.images_per_person == 0 {
            return Err(Error::invalid("batch dimensions must be positive"));
        }
        if self.loss_mode == LossMode::CrossPlusTriplet
            && (self.batch_people < 2 || self.images_per_person < 2)
        {
            return Err(Error::invalid("triplet loss needs P >= 2 and N >= 2"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || self.margin.is_nan() || self.margin < 0.0 {
            return Err(Error::invalid(
                "epsilon must lie in [0, 1] and margin be non-negative",
            ));
        }
        Ok(())
    }
}

/// One training example as seen by the objective.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a, T> {
    pub image: &'a Tensor<T>,
    pub guides: Guides<'a>,
    pub class: usize,
}

/// Loss terms of one batch with the gradient of their sum.
#[derive(Debug, Clone)]
pub struct Objective<T> {
    pub crosse: f64,
    pub trip: Option<f64>,
    pub grads: Gradients<T>,
    /// ReLU sign pattern across the batch; see [`crate::model::backbone::ForwardCache::relu_pattern`].
    pub relu_pattern: Vec<bool>,
    pub hard_pairs: Vec<HardPair>,
}

impl<T> Objective<T> {
    pub fn total(&self) -> f64 {
        self.crosse + self.trip.unwrap_or(0.0)
    }
}

#[cfg(feature = "std")]
fn map_indexed<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "std"))]
fn map_indexed<R>(n: usize, f: impl Fn(usize) -> R) -> Vec<R> {
    (0..n).map(f).collect()
}

/// Batch objective: mean label-smoothed cross-entropy plus, when enabled,
/// the anchor-averaged batch-hard triplet loss on the combined embeddings.
///
/// `items` must be ordered person-major (`people` groups of `per_person`).
/// Per-sample gradients are summed in item order, so the result does not
/// depend on how many threads evaluate the samples.
pub fn batch_objective<T: Real>(
    model: &StreamModel<T>,
    items: &[BatchItem<'_, T>],
    people: usize,
    per_person: usize,
    epsilon: f64,
    margin: f64,
    mode: LossMode,
) -> Result<Objective<T>> {
    if items.len() != people * per_person || items.is_empty() {
        return Err(Error::invalid(
            "batch size does not match people x per_person",
        ));
    }
    let forwards: Vec<StreamForward<T>> = map_indexed(items.len(), |i| {
        model.forward(items[i].image, items[i].guides)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let b = items.len() as f64;
    let mut crosse = 0.0;
    let mut grad_logits = Vec::with_capacity(items.len());
    for (item, fwd) in items.iter().zip(&forwards) {
        let (loss, grad) = cross_entropy_lsr(&fwd.logits, item.class, epsilon)?;
        crosse += loss / b;
        grad_logits.push(grad.into_iter().map(|g| g / T::lit(b)).collect::<Vec<T>>());
    }

    let (trip, grad_embed, hard_pairs) = match mode {
        LossMode::CrossOnly => (None, None, Vec::new()),
        LossMode::CrossPlusTriplet => {
            let batch = TripletBatch::new(
                people,
                per_person,
                forwards.iter().map(|f| f.combined.clone()).collect(),
                margin,
            )?
            .with_reduction(Reduction::Mean);
            let out = triplet_hard(&batch)?;
            (Some(out.loss), Some(out.grads), out.pairs)
        }
    };

    let per_sample: Vec<Gradients<T>> = map_indexed(items.len(), |i| {
        let mut g = model.zero_grads();
        let zero;
        let ge: &[T] = match &grad_embed {
            Some(ge) => &ge[i],
            None => {
                zero = alloc::vec![T::zero(); forwards[i].combined.len()];
                &zero
            }
        };
        model
            .backward(&forwards[i], items[i].guides, ge, &grad_logits[i], &mut g)
            .map(|_| g)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut grads = model.zero_grads();
    for g in &per_sample {
        grads.add_assign(g);
    }
    let relu_pattern = forwards
        .iter()
        .flat_map(|f| f.cache.relu_pattern())
        .collect();
    Ok(Objective {
        crosse,
        trip,
        grads,
        relu_pattern,
        hard_pairs,
    })
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub crosse: f64,
    pub trip: Option<f64>,
    pub lr: f64,
}

/// Trains one stream on the training split of `data`.
///
/// Class indices follow [`Dataset::train_ids`]. Returns the per-epoch loss
/// curve; `epochs == 0` leaves the model untouched.
pub fn train_stream(
    model: &mut StreamModel<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    let ids = data.train_ids();
    if model.num_classes() != ids.len() {
        return Err(Error::invalid(alloc::format!(
            "classifier has {} classes but the training split has {} identities",
            model.num_classes(),
            ids.len()
        )));
    }
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(&shapes, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = step_lr(
            cfg.learning_rate,
            cfg.lr_decay_factor,
            cfg.lr_decay_every,
            epoch,
        );
        let batches = epoch_batches(data, cfg.batch_people, cfg.images_per_person, &mut rng)?;
        let (mut ce_sum, mut trip_sum) = (0.0, 0.0);
        for (bi, batch) in batches.iter().enumerate() {
            let items: Vec<BatchItem<'_, f32>> = batch
                .iter()
                .map(|&i| {
                    let s = &data.samples[i];
                    BatchItem {
                        image: &s.image,
                        guides: s.guides(),
                        class: ids.binary_search(&s.person_id).expect("train identity"),
                    }
                })
                .collect();
            let obj = batch_objective(
                model,
                &items,
                cfg.batch_people,
                cfg.images_per_person,
                cfg.epsilon,
                cfg.margin,
                cfg.loss_mode,
            )?;
            let trip = obj.trip.unwrap_or(0.0);
            if !obj.crosse.is_finite() || !trip.is_finite() || !obj.grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    crosse: obj.crosse,
                    trip,
                });
            }
            ce_sum += obj.crosse;
            trip_sum += trip;
            let mut params = model.params_mut();
            adam.step(&mut params, &obj.grads.buffers, lr);
        }
        let nb = batches.len() as f64;
        curve.push(EpochLoss {
            epoch,
            crosse: ce_sum / nb,
            trip: (cfg.loss_mode == LossMode::CrossPlusTriplet).then_some(trip_sum / nb),
            lr,
        });
    }
    Ok(curve)
}
