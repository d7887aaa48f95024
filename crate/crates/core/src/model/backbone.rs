//! Toy convolutional backbone with an intermediate tap and the per-stream
//! head (guided join, feature combination, identity classifier).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::{
    l2_normalize, l2_normalize_backward, parsing_join, parsing_join_backward, saliency_join,
    saliency_join_backward,
};
use crate::guidance::{GuidanceMap, ParsingMaps};
use crate::model::layers::{relu, relu_backward, Conv2d, Linear};
use crate::real::Real;
use crate::tensor::{concat, global_avg_pool, global_avg_pool_backward, FeatureVector, Tensor};

/// Which guidance a stream joins with its tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    /// Saliency-guided stream.
    Saliency,
    /// Semantic-parsing-guided stream.
    Parsing,
}

impl StreamKind {
    /// Guided-feature length for a tap with `channels` channels.
    pub fn guided_dim(self, channels: usize) -> usize {
        match self {
            StreamKind::Saliency => channels,
            StreamKind::Parsing => 5 * channels,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            StreamKind::Saliency => 0,
            StreamKind::Parsing => 1,
        }
    }

    /// Initialisation seed for this stream derived from a run seed, so the two
    /// streams of one run start from different weights.
    pub fn init_seed(self, seed: u64) -> u64 {
        seed.wrapping_mul(7).wrapping_add(self.code() as u64)
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(StreamKind::Saliency),
            1 => Some(StreamKind::Parsing),
            _ => None,
        }
    }
}

/// Guidance for one image.
#[derive(Debug, Clone, Copy)]
pub struct Guides<'a> {
    pub saliency: &'a GuidanceMap,
    pub parsing: &'a ParsingMaps,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    /// Output channels of each stride-2 stage.
    pub stage_channels: Vec<usize>,
    /// Zero-based stage whose activation feeds the guided join.
    pub tap_stage: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_height: 254,
            input_width: 128,
            input_channels: 3,
            stage_channels: vec![16, 32, 64, 128],
            tap_stage: 2,
        }
    }
}

impl BackboneConfig {
    pub fn with_input(mut self, height: usize, width: usize) -> Self {
        self.input_height = height;
        self.input_width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 || self.input_channels == 0 {
            return Err(Error::invalid("input shape must be positive"));
        }
        if self.stage_channels.len() < 2 || self.stage_channels.contains(&0) {
            return Err(Error::invalid(
                "backbone needs at least two non-empty stages",
            ));
        }
        if self.tap_stage + 1 >= self.stage_channels.len() {
            return Err(Error::invalid(format!(
                "tap stage {} must precede the final stage {}",
                self.tap_stage,
                self.stage_channels.len() - 1
            )));
        }
        Ok(())
    }
}

/// Stack of conv+ReLU stages with stride 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackbone<T> {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub stages: Vec<Conv2d<T>>,
    pub tap_stage: usize,
}

impl<T: Real> ToyBackbone<T> {
    pub fn init(cfg: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(cfg.stage_channels.len());
        let mut cin = cfg.input_channels;
        for &cout in &cfg.stage_channels {
            stages.push(Conv2d::init(cin, cout, 3, 2, rng));
            cin = cout;
        }
        Ok(Self {
            input_height: cfg.input_height,
            input_width: cfg.input_width,
            input_channels: cfg.input_channels,
            stages,
            tap_stage: cfg.tap_stage,
        })
    }

    pub fn tap_channels(&self) -> usize {
        self.stages[self.tap_stage].out_channels
    }

    pub fn global_dim(&self) -> usize {
        self.stages.last().map_or(0, |s| s.out_channels)
    }

    fn check_input(&self, image: &Tensor<T>) -> Result<()> {
        let want = (self.input_height, self.input_width, self.input_channels);
        if image.shape() != want {
            return Err(Error::invalid(format!(
                "image shape {:?} does not match configured input {:?}",
                image.shape(),
                want
            )));
        }
        Ok(())
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input of every stage (index 0 is the image).
    inputs: Vec<Tensor<T>>,
    /// Pre-activation output of every stage.
    pre: Vec<Tensor<T>>,
    last: Tensor<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Signs of every ReLU pre-activation; equal signatures mean no kink lies
    /// between two parameter settings.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre
            .iter()
            .flat_map(|t| t.data().iter().map(|&v| v > T::zero()))
            .collect()
    }
}

/// Per-image outputs of a stream.
#[derive(Debug, Clone)]
pub struct StreamForward<T> {
    pub global: FeatureVector<T>,
    pub tap: Tensor<T>,
    pub guided: FeatureVector<T>,
    /// `concat(l2(global), l2(guided))`: the retrieval embedding and classifier input.
    pub combined: FeatureVector<T>,
    pub logits: Vec<T>,
    pub cache: ForwardCache<T>,
}

/// One trainable stream: backbone, guided head, and identity classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamModel<T> {
    pub kind: StreamKind,
    pub backbone: ToyBackbone<T>,
    pub classifier: Linear<T>,
}

impl<T: Real> StreamModel<T> {
    pub fn init(
        kind: StreamKind,
        cfg: &BackboneConfig,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("classifier needs at least one class"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = ToyBackbone::init(cfg, &mut rng)?;
        let feat = backbone.global_dim() + kind.guided_dim(backbone.tap_channels());
        let classifier = Linear::init(feat, num_classes, &mut rng);
        Ok(Self {
            kind,
            backbone,
            classifier,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.backbone.global_dim() + self.kind.guided_dim(self.backbone.tap_channels())
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim
    }

    pub fn forward(&self, image: &Tensor<T>, guides: Guides<'_>) -> Result<StreamForward<T>> {
        self.backbone.check_input(image)?;
        let n = self.backbone.stages.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = image.clone();
        let mut tap = None;
        for (i, stage) in self.backbone.stages.iter().enumerate() {
            let z = stage.forward(&x);
            let a = relu(&z);
            inputs.push(core::mem::replace(&mut x, a));
            pre.push(z);
            if i == self.backbone.tap_stage {
                tap = Some(x.clone());
            }
        }
        let tap = tap.expect("tap stage precedes final stage");
        let global = global_avg_pool(&x);
        let guided = match self.kind {
            StreamKind::Saliency => saliency_join(&tap, guides.saliency)?,
            StreamKind::Parsing => parsing_join(&tap, guides.parsing)?,
        };
        let combined = concat(&l2_normalize(&global), &l2_normalize(&guided));
        let logits = self.classifier.forward(&combined);
        Ok(StreamForward {
            global,
            tap,
            guided,
            combined,
            logits,
            cache: ForwardCache {
                inputs,
                pre,
                last: x,
            },
        })
    }

    /// Retrieval embedding of one image (the combined stream feature).
    pub fn embed(&self, image: &Tensor<T>, guides: Guides<'_>) -> Result<FeatureVector<T>> {
        Ok(self.forward(image, guides)?.combined)
    }

    /// Backpropagates gradients of a scalar loss given w.r.t. the combined
    /// embedding and the logits, accumulating into `grads` (parameter order).
    pub fn backward(
        &self,
        fwd: &StreamForward<T>,
        guides: Guides<'_>,
        grad_combined: &[T],
        grad_logits: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        let n = self.backbone.stages.len();
        let (cls_w, cls_b) = grads.classifier_mut(n);
        let mut grad_feat = self
            .classifier
            .backward(&fwd.combined, grad_logits, cls_w, cls_b);
        for (g, extra) in grad_feat.iter_mut().zip(grad_combined) {
            *g += *extra;
        }
        let gdim = fwd.global.len();
        let grad_global = l2_normalize_backward(&fwd.global, &grad_feat[..gdim]);
        let grad_guided = l2_normalize_backward(&fwd.guided, &grad_feat[gdim..]);
        let grad_tap = self.guided_backward(&fwd.tap, guides, &grad_guided)?;

        let last = &fwd.cache.last;
        let mut grad_act = global_avg_pool_backward(&grad_global, last.height(), last.width());
        for i in (0..n).rev() {
            if i == self.backbone.tap_stage {
                for (g, t) in grad_act.data_mut().iter_mut().zip(grad_tap.data()) {
                    *g += *t;
                }
            }
            let grad_pre = relu_backward(&fwd.cache.pre[i], &grad_act);
            let (gw, gb) = grads.stage_mut(i);
            match self.backbone.stages[i].backward(&fwd.cache.inputs[i], &grad_pre, gw, gb, i > 0) {
                Some(g) => grad_act = g,
                None => break,
            }
        }
        Ok(())
    }

    /// Gradient of the guided feature w.r.t. the tap activation.
    pub fn guided_backward(
        &self,
        tap: &Tensor<T>,
        guides: Guides<'_>,
        grad_guided: &[T],
    ) -> Result<Tensor<T>> {
        match self.kind {
            StreamKind::Saliency => {
                saliency_join_backward(tap.height(), tap.width(), guides.saliency, grad_guided)
            }
            StreamKind::Parsing => {
                parsing_join_backward(tap.height(), tap.width(), guides.parsing, grad_guided)
            }
        }
    }

    /// Parameter buffers in a fixed order: each stage's weight then bias,
    /// followed by the classifier's weight and bias.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for s in &self.backbone.stages {
            out.push(&s.weight);
            out.push(&s.bias);
        }
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = Vec::new();
        for s in &mut self.backbone.stages {
            out.push(&mut s.weight);
            out.push(&mut s.bias);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            buffers: self
                .params()
                .iter()
                .map(|p| vec![T::zero(); p.len()])
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> StreamModel<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::lit(x.to_wide())).collect::<Vec<U>>();
        StreamModel {
            kind: self.kind,
            backbone: ToyBackbone {
                input_height: self.backbone.input_height,
                input_width: self.backbone.input_width,
                input_channels: self.backbone.input_channels,
                stages: self
                    .backbone
                    .stages
                    .iter()
                    .map(|s| Conv2d {
                        in_channels: s.in_channels,
                        out_channels: s.out_channels,
                        kernel: s.kernel,
                        stride: s.stride,
                        padding: s.padding,
                        weight: cv(&s.weight),
                        bias: cv(&s.bias),
                    })
                    .collect(),
                tap_stage: self.backbone.tap_stage,
            },
            classifier: Linear {
                in_dim: self.classifier.in_dim,
                out_dim: self.classifier.out_dim,
                weight: cv(&self.classifier.weight),
                bias: cv(&self.classifier.bias),
            },
        }
    }
}

/// Gradient buffers mirroring [`StreamModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub buffers: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    fn stage_mut(&mut self, stage: usize) -> (&mut [T], &mut [T]) {
        let (w, rest) = self.buffers[2 * stage..].split_at_mut(1);
        (&mut w[0], &mut rest[0])
    }

    fn classifier_mut(&mut self, stages: usize) -> (&mut [T], &mut [T]) {
        self.stage_mut(stages)
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.buffers.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.buffers.iter().flatten().all(|x| x.is_finite())
    }
}
