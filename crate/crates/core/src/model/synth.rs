//! Synthetic re-identification benchmark: persistent per-identity body
//! layouts rendered under simulated camera changes, with paired guidance maps.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::guidance::{synth_maps, BodyLayout, GuidanceMap, ParsingMaps, Rect};
use crate::model::backbone::Guides;
use crate::retrieval::GalleryEntry;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "query" => Some(Split::Query),
            "gallery" => Some(Split::Gallery),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthConfig {
    pub num_ids: usize,
    pub images_per_id: usize,
    pub num_cameras: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub map_height: usize,
    pub map_width: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Full-size frames: 254x128 images with 128x64 maps.
    pub fn new(num_ids: usize, images_per_id: usize, seed: u64) -> Self {
        Self {
            num_ids,
            images_per_id,
            num_cameras: 2,
            image_height: 254,
            image_width: 128,
            map_height: 128,
            map_width: 64,
            seed,
        }
    }

    pub fn with_image(mut self, height: usize, width: usize) -> Self {
        self.image_height = height;
        self.image_width = width;
        self.map_height = height.div_ceil(2);
        self.map_width = width.div_ceil(2);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.num_ids < 2 || self.images_per_id < 2 {
            return Err(Error::invalid(
                "synthetic data needs at least 2 identities and 2 images each",
            ));
        }
        if self.num_cameras < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 cameras"));
        }
        if self.image_height < 16
            || self.image_width < 8
            || self.map_height == 0
            || self.map_width == 0
        {
            return Err(Error::invalid("synthetic frames must be at least 16x8"));
        }
        Ok(())
    }
}

/// Appearance shared by every image of one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    /// Head, upper body, lower body, shoes.
    pub part_colors: [[u8; 3]; 4],
    pub item_color: [u8; 3],
    pub item_right: bool,
    pub item_low: bool,
    /// Fractions of frame height at which upper/lower/shoes begin.
    pub cuts: [f64; 3],
}

impl Identity {
    /// Generating prototype, used as an oracle embedding.
    pub fn prototype(&self) -> Vec<f32> {
        let mut v: Vec<f32> = self
            .part_colors
            .iter()
            .chain(core::iter::once(&self.item_color))
            .flat_map(|c| c.iter().map(|&x| x as f32 / 255.0))
            .collect();
        v.push(self.item_right as u8 as f32);
        v.push(self.item_low as u8 as f32);
        v.extend(self.cuts.iter().map(|&c| c as f32));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub person_id: u32,
    pub camera_id: u16,
    pub split: Split,
    pub image: Tensor<f32>,
    pub saliency: GuidanceMap,
    pub parsing: ParsingMaps,
}

impl Sample {
    pub fn guides(&self) -> Guides<'_> {
        Guides {
            saliency: &self.saliency,
            parsing: &self.parsing,
        }
    }
}

/// Images with their maps and split labels.
///
/// `identities` holds the generating appearance per person id when the data
/// was synthesised in-process, and is empty for data loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub identities: Vec<Identity>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Wraps loaded samples, renumbering `index` to match positions.
    pub fn from_samples(mut samples: Vec<Sample>) -> Self {
        for (i, s) in samples.iter_mut().enumerate() {
            s.index = i;
        }
        Self {
            identities: Vec::new(),
            samples,
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Identities appearing in the training split, ascending; a person's class
    /// index is its position here.
    pub fn train_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.split(Split::Train).map(|s| s.person_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Prototype features for the samples of one split (perfect-oracle embeddings).
    pub fn oracle_entries(&self, split: Split) -> Result<Vec<GalleryEntry<f32>>> {
        self.split(split)
            .map(|s| {
                let id = self
                    .identities
                    .get(s.person_id as usize)
                    .ok_or_else(|| Error::invalid("dataset carries no generating identities"))?;
                Ok(GalleryEntry::new(s.person_id, s.camera_id, id.prototype()))
            })
            .collect()
    }
}

const PALETTE: [[u8; 3]; 10] = [
    [220, 40, 40],
    [40, 170, 60],
    [40, 80, 210],
    [235, 210, 50],
    [30, 30, 30],
    [240, 240, 240],
    [150, 70, 180],
    [240, 140, 30],
    [60, 190, 200],
    [130, 90, 50],
];

const SKIN: [[u8; 3]; 3] = [[230, 190, 160], [180, 130, 90], [110, 75, 50]];

fn random_identity(rng: &mut ChaCha8Rng) -> Identity {
    let pick = |rng: &mut ChaCha8Rng| PALETTE[rng.gen_range(0..PALETTE.len())];
    Identity {
        part_colors: [
            SKIN[rng.gen_range(0..SKIN.len())],
            pick(rng),
            pick(rng),
            pick(rng),
        ],
        item_color: pick(rng),
        item_right: rng.gen_bool(0.5),
        item_low: rng.gen_bool(0.5),
        cuts: [
            rng.gen_range(0.17..0.23),
            rng.gen_range(0.47..0.55),
            rng.gen_range(0.84..0.89),
        ],
    }
}

/// Body layout of an identity, shifted horizontally by `shift` pixels.
fn layout_for(id: &Identity, h: usize, w: usize, shift: isize) -> BodyLayout {
    let row = |f: f64| libm::round(f * h as f64) as usize;
    let col = |f: f64| (libm::round(f * w as f64) as isize + shift).clamp(0, w as isize) as usize;
    let span = |top: usize, bottom: usize, left: f64, right: f64| {
        let (l, r) = (col(left), col(right));
        Rect::new(top, l, bottom.saturating_sub(top), r.saturating_sub(l))
    };
    let (top, bottom) = (row(0.04), row(0.96));
    let [u, l, s] = id.cuts.map(row);
    let torso = span(u, l, 0.28, 0.72);
    let item_top = if id.item_low { row(0.45) } else { row(0.26) };
    let item_rows = (item_top, item_top + (h / 5).max(2));
    let item = if id.item_right {
        span(item_rows.0, item_rows.1, 0.74, 0.92)
    } else {
        span(item_rows.0, item_rows.1, 0.08, 0.26)
    };
    BodyLayout {
        height: h,
        width: w,
        parts: [
            Some(span(top, u, 0.38, 0.62)),
            Some(torso),
            Some(span(l, s, 0.32, 0.68)),
            Some(span(s, bottom, 0.30, 0.70)),
        ],
        salient: Some(item),
    }
}

struct Camera {
    background: [f64; 3],
    gain: f64,
    cast: [f64; 3],
}

fn camera(index: usize) -> Camera {
    match index % 2 {
        0 => Camera {
            background: [0.45, 0.47, 0.5],
            gain: 1.0,
            cast: [1.0, 1.0, 1.0],
        },
        _ => Camera {
            background: [0.3, 0.36, 0.28],
            gain: 0.72,
            cast: [0.92, 1.0, 1.1],
        },
    }
}

fn render(id: &Identity, layout: &BodyLayout, cam: &Camera, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let (h, w) = (layout.height, layout.width);
    let gain = cam.gain * rng.gen_range(0.85..1.15);
    let clutter: Vec<(Rect, [u8; 3])> = (0..rng.gen_range(2..5))
        .map(|_| {
            let rh = rng.gen_range(h / 8..h / 3);
            let rw = rng.gen_range(w / 6..w / 3);
            let r = Rect::new(rng.gen_range(0..h - rh), rng.gen_range(0..w - rw), rh, rw);
            (r, PALETTE[rng.gen_range(0..PALETTE.len())])
        })
        .collect();
    let occluder = rng.gen_bool(0.3).then(|| {
        let rows = rng.gen_range(h / 8..h / 4);
        let top = rng.gen_range(h / 4..h - rows);
        let color = PALETTE[rng.gen_range(0..PALETTE.len())];
        (
            Rect::new(top, 0, rows, rng.gen_range(w / 3..w / 2 + 1)),
            color,
        )
    });
    let mut data = Vec::with_capacity(h * w * 3);
    for row in 0..h {
        for col in 0..w {
            let mut rgb = cam.background;
            let mut lit = false;
            for (r, color) in &clutter {
                if r.contains(row, col) {
                    rgb = color.map(|c| c as f64 / 255.0);
                }
            }
            for (k, part) in layout.parts.iter().enumerate() {
                if part.is_some_and(|r| r.contains(row, col)) {
                    rgb = id.part_colors[k].map(|c| c as f64 / 255.0);
                    lit = true;
                }
            }
            if layout.salient.is_some_and(|r| r.contains(row, col)) {
                rgb = id.item_color.map(|c| c as f64 / 255.0);
                lit = true;
            }
            if let Some((r, color)) = &occluder {
                if r.contains(row, col) {
                    rgb = color.map(|c| c as f64 / 255.0 * 0.8);
                    lit = false;
                }
            }
            for (&c, &cast) in rgb.iter().zip(&cam.cast) {
                let scale = if lit { gain * cast } else { 1.0 };
                let v = (c * scale + rng.gen_range(-0.06..0.06)).clamp(0.0, 1.0);
                data.push((libm::round(v * 255.0) / 255.0) as f32);
            }
        }
    }
    Tensor::new(h, w, 3, data).expect("render shape")
}

/// Generates the benchmark.
///
/// The first `ceil(num_ids / 2)` identities form the training split. For the
/// remaining ones image `j` is taken by camera `j % num_cameras`; image 0
/// (and image 1 when an identity has at least four) is a query and the rest
/// form the gallery, so every query has true matches under another camera.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut identities: Vec<Identity> = Vec::with_capacity(cfg.num_ids);
    while identities.len() < cfg.num_ids {
        let id = random_identity(&mut rng);
        let dup = identities.iter().any(|o| {
            o.part_colors[1..] == id.part_colors[1..]
                && o.item_color == id.item_color
                && o.item_right == id.item_right
        });
        if !dup {
            identities.push(id);
        }
    }

    let n_train = cfg.num_ids - cfg.num_ids / 2;
    let max_shift = (cfg.image_width / 16) as isize;
    let mut samples = Vec::with_capacity(cfg.num_ids * cfg.images_per_id);
    for (pid, id) in identities.iter().enumerate() {
        for j in 0..cfg.images_per_id {
            let cam_index = j % cfg.num_cameras;
            let split = if pid < n_train {
                Split::Train
            } else if j == 0 || (j == 1 && cfg.images_per_id >= 4) {
                Split::Query
            } else {
                Split::Gallery
            };
            let shift = rng.gen_range(-max_shift..=max_shift);
            let layout = layout_for(id, cfg.image_height, cfg.image_width, shift);
            let image = render(id, &layout, &camera(cam_index), &mut rng);
            let map_layout = layout.rescaled(cfg.map_height, cfg.map_width);
            let (saliency, parsing) = synth_maps(&map_layout, rng.gen())?;
            samples.push(Sample {
                index: samples.len(),
                person_id: pid as u32,
                camera_id: cam_index as u16,
                split,
                image,
                saliency,
                parsing,
            });
        }
    }
    Ok(Dataset {
        identities,
        samples,
    })
}

/// Deterministic `P x N` identity-balanced batches over the training split.
///
/// Each epoch yields `ceil(train_images / (P*N))` batches. Identities are
/// drawn from a reshuffled cycle so every batch holds `P` distinct people;
/// images are drawn without replacement when a person has at least `N`.
pub fn epoch_batches(
    data: &Dataset,
    people: usize,
    per_person: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let ids = data.train_ids();
    if ids.len() < people {
        return Err(Error::invalid(
            "fewer training identities than batch people",
        ));
    }
    let by_id: Vec<Vec<usize>> = ids
        .iter()
        .map(|&pid| {
            data.split(Split::Train)
                .filter(|s| s.person_id == pid)
                .map(|s| s.index)
                .collect()
        })
        .collect();
    let total: usize = by_id.iter().map(Vec::len).sum();
    let batches = total.div_ceil(people * per_person).max(1);
    let mut order: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(batches);
    for _ in 0..batches {
        let mut chosen = Vec::with_capacity(people);
        while chosen.len() < people {
            if order.is_empty() {
                order = (0..ids.len()).collect();
                order.shuffle(rng);
            }
            let next = order.pop().expect("refilled");
            if !chosen.contains(&next) {
                chosen.push(next);
            }
        }
        let mut batch = Vec::with_capacity(people * per_person);
        for &k in &chosen {
            let pool = &by_id[k];
            if pool.len() >= per_person {
                batch.extend(pool.choose_multiple(rng, per_person).copied());
            } else {
                batch.extend((0..per_person).map(|_| pool[rng.gen_range(0..pool.len())]));
            }
        }
        out.push(batch);
    }
    Ok(out)
}
