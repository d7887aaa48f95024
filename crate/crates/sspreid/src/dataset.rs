//! Dataset directories:
//!
//! ```text
//! split.csv              name,split,person_id,camera_id
//! images/<name>.ppm      P6 colour image
//! saliency/<name>.pgm    P5 saliency map
//! parsing/<name>.pgm     P5 label map
//! ```

use std::path::Path;

use rayon::prelude::*;
use sspreid_core::model::{Dataset, Sample};

use crate::csvfmt::{self, SplitRow};
use crate::error::{Error, Result};
use crate::{fsutil, pnm};

pub const SPLIT_FILE: &str = "split.csv";

pub fn image_name(index: usize) -> String {
    format!("{index:05}")
}

pub fn write(dir: &Path, data: &Dataset) -> Result<()> {
    for sub in ["images", "saliency", "parsing"] {
        fsutil::create_dir(&dir.join(sub))?;
    }
    let rows: Vec<SplitRow> = data
        .samples
        .iter()
        .map(|s| SplitRow {
            name: image_name(s.index),
            split: s.split,
            person_id: s.person_id,
            camera_id: s.camera_id,
        })
        .collect();
    data.samples
        .par_iter()
        .zip(&rows)
        .try_for_each(|(s, r)| -> Result<()> {
            pnm::save_image(
                &dir.join("images").join(format!("{}.ppm", r.name)),
                &s.image,
            )?;
            pnm::save_saliency(
                &dir.join("saliency").join(format!("{}.pgm", r.name)),
                &s.saliency,
            )?;
            pnm::save_parsing(
                &dir.join("parsing").join(format!("{}.pgm", r.name)),
                &s.parsing,
            )
        })?;
    fsutil::write_atomic(
        &dir.join(SPLIT_FILE),
        csvfmt::encode_split(&rows).as_bytes(),
    )
}

fn load_sample(
    dir: &Path,
    index: usize,
    row: &SplitRow,
) -> std::result::Result<Sample, Vec<Error>> {
    let image = pnm::load_image(&dir.join("images").join(format!("{}.ppm", row.name)));
    let saliency = pnm::load_saliency(&dir.join("saliency").join(format!("{}.pgm", row.name)));
    let parsing = pnm::load_parsing(&dir.join("parsing").join(format!("{}.pgm", row.name)));
    match (image, saliency, parsing) {
        (Ok(image), Ok(saliency), Ok(parsing)) => {
            if saliency.height() != parsing.height() || saliency.width() != parsing.width() {
                return Err(vec![Error::Argument(format!(
                    "{}: saliency map is {}x{} but parsing map is {}x{}",
                    row.name,
                    saliency.height(),
                    saliency.width(),
                    parsing.height(),
                    parsing.width()
                ))]);
            }
            Ok(Sample {
                index,
                person_id: row.person_id,
                camera_id: row.camera_id,
                split: row.split,
                image,
                saliency,
                parsing,
            })
        }
        (a, b, c) => Err([a.err(), b.err(), c.err()].into_iter().flatten().collect()),
    }
}

/// Loads every listed sample. All unreadable files are reported together.
pub fn load(dir: &Path) -> Result<Dataset> {
    let split_path = dir.join(SPLIT_FILE);
    let text = String::from_utf8(fsutil::read(&split_path)?).map_err(|_| {
        Error::decode(
            &split_path,
            crate::error::DecodeError::Content("not UTF-8".into()),
        )
    })?;
    let rows = csvfmt::decode_split(&text).map_err(|e| Error::decode(&split_path, e))?;
    let results: Vec<_> = rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| load_sample(dir, i, r))
        .collect();
    let mut samples = Vec::with_capacity(rows.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => errors.extend(e),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Inputs(errors));
    }
    if let Some(first) = samples.first() {
        let shape = first.image.shape();
        if let Some(s) = samples.iter().find(|s| s.image.shape() != shape) {
            return Err(Error::Argument(format!(
                "image {} has shape {:?}, expected {:?}",
                rows[s.index].name,
                s.image.shape(),
                shape
            )));
        }
    }
    Ok(Dataset::from_samples(samples))
}
