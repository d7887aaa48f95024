//! Saliency and semantic-parsing guidance maps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Single-channel spatial weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMap {
    height: usize,
    width: usize,
    weights: Vec<f32>,
}

/// Borrowed spatial weights without the `[0, 1]` constraint.
#[derive(Debug, Clone, Copy)]
pub struct MapView<'a> {
    pub height: usize,
    pub width: usize,
    pub weights: &'a [f32],
}

impl<'a> MapView<'a> {
    pub fn new(height: usize, width: usize, weights: &'a [f32]) -> Result<Self> {
        if height == 0 || width == 0 || weights.len() != height * width {
            return Err(Error::invalid(format!(
                "map view {height}x{width} with {} weights",
                weights.len()
            )));
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }
}

impl<'a> From<&'a GuidanceMap> for MapView<'a> {
    fn from(map: &'a GuidanceMap) -> Self {
        MapView {
            height: map.height,
            width: map.width,
            weights: &map.weights,
        }
    }
}

impl GuidanceMap {
    pub fn new(height: usize, width: usize, weights: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("guidance map dimensions must be positive"));
        }
        if weights.len() != height * width {
            return Err(Error::invalid(format!(
                "guidance map {height}x{width} needs {} weights, got {}",
                height * width,
                weights.len()
            )));
        }
        if let Some(pos) = weights.iter().position(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid(format!(
                "guidance weight {} at index {pos} outside [0, 1]",
                weights[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// 8-bit intensities scaled by `1/255`.
    pub fn from_u8(height: usize, width: usize, pixels: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        )
    }

    /// Inverse of [`GuidanceMap::from_u8`]; exact for maps built from bytes.
    pub fn to_u8(&self) -> Vec<u8> {
        self.weights
            .iter()
            .map(|&w| libm::roundf(w * 255.0) as u8)
            .collect()
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
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.weights[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().map(|&w| w as f64).sum::<f64>() / self.weights.len() as f64
    }
}

/// Semantic regions in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Head = 0,
    UpperBody = 1,
    LowerBody = 2,
    Shoes = 3,
    CompleteBody = 4,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Head,
        Region::UpperBody,
        Region::LowerBody,
        Region::Shoes,
        Region::CompleteBody,
    ];

    /// Pixel label in the parsing file format (`0` is background).
    pub fn label(self) -> Option<u8> {
        match self {
            Region::CompleteBody => None,
            r => Some(r as u8 + 1),
        }
    }
}

pub const REGION_COUNT: usize = 5;

/// Five binary region masks: head, upper body, lower body, shoes, and their union.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsingMaps {
    regions: [GuidanceMap; REGION_COUNT],
}

impl ParsingMaps {
    pub fn new(regions: [GuidanceMap; REGION_COUNT]) -> Result<Self> {
        let (h, w) = (regions[0].height, regions[0].width);
        if regions.iter().any(|r| r.height != h || r.width != w) {
            return Err(Error::invalid("parsing regions must share one shape"));
        }
        let body = &regions[Region::CompleteBody as usize];
        for part in &regions[..4] {
            if part.weights.iter().zip(&body.weights).any(|(p, b)| p > b) {
                return Err(Error::invalid(
                    "complete-body map must dominate every part map",
                ));
            }
        }
        Ok(Self { regions })
    }

    /// Builds the five masks from a label image (`0` background, `1..=4` parts).
    pub fn from_labels(height: usize, width: usize, labels: &[u8]) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::invalid(format!(
                "label map {height}x{width} with {} pixels",
                labels.len()
            )));
        }
        let mut masks: [Vec<f32>; REGION_COUNT] = Default::default();
        for m in masks.iter_mut() {
            *m = vec![0.0; labels.len()];
        }
        for (i, &label) in labels.iter().enumerate() {
            match label {
                0 => {}
                1..=4 => {
                    masks[label as usize - 1][i] = 1.0;
                    masks[Region::CompleteBody as usize][i] = 1.0;
                }
                value => {
                    return Err(Error::InvalidLabel {
                        row: i / width,
                        col: i % width,
                        value,
                    })
                }
            }
        }
        let regions = masks.map(|weights| GuidanceMap {
            height,
            width,
            weights,
        });
        Ok(Self { regions })
    }

    /// Label image of the four part masks. Where parts overlap the first
    /// region in storage order wins.
    pub fn to_labels(&self) -> Vec<u8> {
        let n = self.height() * self.width();
        (0..n)
            .map(|i| {
                self.regions[..4]
                    .iter()
                    .position(|r| r.weights[i] >= 0.5)
                    .map_or(0, |k| k as u8 + 1)
            })
            .collect()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.regions[0].height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.regions[0].width
    }

    #[inline]
    pub fn region(&self, region: Region) -> &GuidanceMap {
        &self.regions[region as usize]
    }

    pub fn regions(&self) -> &[GuidanceMap; REGION_COUNT] {
        &self.regions
    }
}

/// Axis-aligned pixel box `[top, top+height) x [left, left+width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub const fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top
            && row < self.top + self.height
            && col >= self.left
            && col < self.left + self.width
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.top < other.top + other.height
            && other.top < self.top + self.height
            && self.left < other.left + other.width
            && other.left < self.left + self.width
    }

    fn is_empty(&self) -> bool {
        self.height == 0 || self.width == 0
    }

    /// Rescales from a `from_h x from_w` frame to `to_h x to_w`, rounding edges.
    pub fn rescaled(&self, from_h: usize, from_w: usize, to_h: usize, to_w: usize) -> Rect {
        let sy = to_h as f64 / from_h as f64;
        let sx = to_w as f64 / from_w as f64;
        let top = libm::round(self.top as f64 * sy) as usize;
        let left = libm::round(self.left as f64 * sx) as usize;
        let bottom = libm::round((self.top + self.height) as f64 * sy) as usize;
        let right = libm::round((self.left + self.width) as f64 * sx) as usize;
        Rect::new(
            top.min(to_h),
            left.min(to_w),
            bottom.min(to_h).saturating_sub(top),
            right.min(to_w).saturating_sub(left),
        )
    }
}

/// Synthetic person layout: one optional box per body part plus an optional
/// salient item (a bag, a logo) the saliency bump is centred on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyLayout {
    pub height: usize,
    pub width: usize,
    /// Head, upper body, lower body, shoes.
    pub parts: [Option<Rect>; 4],
    pub salient: Option<Rect>,
}

impl BodyLayout {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("layout frame must be non-empty"));
        }
        let inside = |r: &Rect| r.top + r.height <= self.height && r.left + r.width <= self.width;
        let boxes: Vec<(usize, &Rect)> = self
            .parts
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|r| (i, r)))
            .collect();
        for &(i, r) in &boxes {
            if !inside(r) {
                return Err(Error::invalid(format!("part box {i} leaves the frame")));
            }
        }
        for (a, &(i, ri)) in boxes.iter().enumerate() {
            for &(j, rj) in &boxes[a + 1..] {
                if !ri.is_empty() && !rj.is_empty() && ri.overlaps(rj) {
                    return Err(Error::invalid(format!("part boxes {i} and {j} overlap")));
                }
            }
        }
        if let Some(s) = &self.salient {
            if !inside(s) || s.is_empty() {
                return Err(Error::invalid(
                    "salient box must be non-empty and inside the frame",
                ));
            }
        }
        Ok(())
    }

    /// Same layout expressed in a frame of a different resolution.
    pub fn rescaled(&self, height: usize, width: usize) -> BodyLayout {
        let f = |r: &Rect| r.rescaled(self.height, self.width, height, width);
        BodyLayout {
            height,
            width,
            parts: self.parts.map(|p| p.as_ref().map(f)),
            salient: self.salient.as_ref().map(f),
        }
    }
}

/// Renders the saliency and parsing maps of a layout.
///
/// Parsing maps are the box indicators. Saliency is a Gaussian bump on the
/// salient box whose centre and spread are jittered by `seed`; values are
/// quantised to multiples of `1/255` so they survive an 8-bit round trip.
pub fn synth_maps(layout: &BodyLayout, seed: u64) -> Result<(GuidanceMap, ParsingMaps)> {
    layout.validate()?;
    let (h, w) = (layout.height, layout.width);
    let mut labels = vec![0u8; h * w];
    for (k, part) in layout.parts.iter().enumerate() {
        if let Some(r) = part {
            for row in r.top..r.top + r.height {
                for col in r.left..r.left + r.width {
                    labels[row * w + col] = k as u8 + 1;
                }
            }
        }
    }
    let parsing = ParsingMaps::from_labels(h, w, &labels)?;

    let mut saliency = vec![0u8; h * w];
    if let Some(s) = &layout.salient {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cy = s.top as f64 + (s.height as f64 - 1.0) / 2.0 + rng.gen_range(-0.5..0.5);
        let cx = s.left as f64 + (s.width as f64 - 1.0) / 2.0 + rng.gen_range(-0.5..0.5);
        let sy = (s.height as f64 / 2.0).max(1.0) * rng.gen_range(0.9..1.1);
        let sx = (s.width as f64 / 2.0).max(1.0) * rng.gen_range(0.9..1.1);
        for row in 0..h {
            for col in 0..w {
                let dy = (row as f64 - cy) / sy;
                let dx = (col as f64 - cx) / sx;
                let v = libm::exp(-0.5 * (dy * dy + dx * dx));
                saliency[row * w + col] = libm::round(v * 255.0) as u8;
            }
        }
    }
    Ok((GuidanceMap::from_u8(h, w, &saliency)?, parsing))
}
