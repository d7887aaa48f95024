//! Cross-entropy with label smoothing and batch-hard triplet loss, each with
//! its analytic gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// Smoothed target distribution over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub probs: Vec<f64>,
}

/// `(1 - eps) * one_hot(true_class) + eps / K`.
pub fn lsr_target(
    true_class: usize,
    num_classes: usize,
    epsilon: f64,
) -> Result<LabelDistribution> {
    if true_class >= num_classes {
        return Err(Error::invalid(format!(
            "class {true_class} out of range for {num_classes} classes"
        )));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let base = epsilon / num_classes as f64;
    let mut probs = vec![base; num_classes];
    probs[true_class] += 1.0 - epsilon;
    Ok(LabelDistribution { probs })
}

/// Max-shifted log-softmax in `f64`.
fn log_softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|v| v.to_wide())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + libm::log(
            logits
                .iter()
                .map(|v| libm::exp(v.to_wide() - max))
                .sum::<f64>(),
        );
    logits.iter().map(|v| v.to_wide() - lse).collect()
}

/// Label-smoothed cross-entropy `-sum_k q'(k) log p(k)` and its gradient
/// `p - q'` with respect to the logits.
pub fn cross_entropy_lsr<T: Real>(
    logits: &[T],
    true_class: usize,
    epsilon: f64,
) -> Result<(f64, Vec<T>)> {
    let target = lsr_target(true_class, logits.len(), epsilon)?;
    let logp = log_softmax(logits);
    let loss = -logp
        .iter()
        .zip(&target.probs)
        .map(|(lp, q)| lp * q)
        .sum::<f64>();
    let grad = logp
        .iter()
        .zip(&target.probs)
        .map(|(lp, q)| T::lit(libm::exp(*lp) - q))
        .collect();
    Ok((loss, grad))
}

/// The same objective evaluated as `(1 - eps) H(q, p) + eps H(u, p)`.
pub fn cross_entropy_lsr_mixture<T: Real>(
    logits: &[T],
    true_class: usize,
    epsilon: f64,
) -> Result<f64> {
    if true_class >= logits.len() {
        return Err(Error::invalid("class index out of range"));
    }
    let logp = log_softmax(logits);
    let hard = -logp[true_class];
    let uniform = -logp.iter().sum::<f64>() / logits.len() as f64;
    Ok((1.0 - epsilon) * hard + epsilon * uniform)
}

/// How per-anchor hinge terms are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// `P` identities with `N` embeddings each, stored person-major.
#[derive(Debug, Clone)]
pub struct TripletBatch<T> {
    pub people: usize,
    pub per_person: usize,
    pub embeddings: Vec<Vec<T>>,
    pub margin: f64,
    pub reduction: Reduction,
}

impl<T: Real> TripletBatch<T> {
    pub fn new(
        people: usize,
        per_person: usize,
        embeddings: Vec<Vec<T>>,
        margin: f64,
    ) -> Result<Self> {
        let batch = Self {
            people,
            per_person,
            embeddings,
            margin,
            reduction: Reduction::Sum,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.people < 2 {
            return Err(Error::invalid(
                "triplet batch needs at least two identities",
            ));
        }
        if self.per_person < 2 {
            return Err(Error::invalid(
                "triplet batch needs at least two images per identity",
            ));
        }
        if self.embeddings.len() != self.people * self.per_person {
            return Err(Error::invalid(format!(
                "expected {} embeddings, got {}",
                self.people * self.per_person,
                self.embeddings.len()
            )));
        }
        let dim = self.embeddings[0].len();
        if self.embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::invalid(
                "embedding dimensions differ within the batch",
            ));
        }
        if self.margin.is_nan() || self.margin < 0.0 {
            return Err(Error::invalid("margin must be non-negative"));
        }
        Ok(())
    }

    #[inline]
    fn person(&self, index: usize) -> usize {
        index / self.per_person
    }
}

/// Per-anchor mining result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardPair {
    pub positive: usize,
    pub negative: usize,
    pub hinge: f64,
}

#[derive(Debug, Clone)]
pub struct TripletOutput<T> {
    pub loss: f64,
    pub grads: Vec<Vec<T>>,
    pub pairs: Vec<HardPair>,
}

fn euclidean<T: Real>(a: &[T], b: &[T]) -> f64 {
    libm::sqrt(
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let d = x.to_wide() - y.to_wide();
                d * d
            })
            .sum::<f64>(),
    )
}

/// Batch-hard triplet loss over non-squared Euclidean distances.
///
/// For every anchor the farthest same-identity embedding (the anchor itself
/// excluded) and the nearest other-identity embedding are selected; the loss
/// is the reduced hinge `[m + d_pos - d_neg]_+`. Ties resolve to the lowest
/// index. Subgradients flow only through the selected pairs.
pub fn triplet_hard<T: Real>(batch: &TripletBatch<T>) -> Result<TripletOutput<T>> {
    batch.validate()?;
    let n = batch.embeddings.len();
    let dim = batch.embeddings[0].len();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(&batch.embeddings[i], &batch.embeddings[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let scale = match batch.reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / n as f64,
    };
    let mut grads = vec![vec![T::zero(); dim]; n];
    let mut pairs = Vec::with_capacity(n);
    let mut total = 0.0;
    for a in 0..n {
        let pa = batch.person(a);
        let mut pos = (usize::MAX, f64::NEG_INFINITY);
        let mut neg = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist[a * n + j];
            if batch.person(j) == pa {
                if d > pos.1 {
                    pos = (j, d);
                }
            } else if d < neg.1 {
                neg = (j, d);
            }
        }
        let hinge = (batch.margin + pos.1 - neg.1).max(0.0);
        pairs.push(HardPair {
            positive: pos.0,
            negative: neg.0,
            hinge,
        });
        total += hinge;
        if hinge > 0.0 {
            accumulate_distance_grad(&mut grads, &batch.embeddings, a, pos.0, pos.1, scale);
            accumulate_distance_grad(&mut grads, &batch.embeddings, a, neg.0, neg.1, -scale);
        }
    }
    Ok(TripletOutput {
        loss: total * scale,
        grads,
        pairs,
    })
}

/// Adds `coef * dD(a, b)` to the gradients of both endpoints.
fn accumulate_distance_grad<T: Real>(
    grads: &mut [Vec<T>],
    emb: &[Vec<T>],
    a: usize,
    b: usize,
    d: f64,
    coef: f64,
) {
    if d == 0.0 {
        return;
    }
    for k in 0..emb[a].len() {
        let g = coef * (emb[a][k].to_wide() - emb[b][k].to_wide()) / d;
        grads[a][k] += T::lit(g);
        grads[b][k] -= T::lit(g);
    }
}
