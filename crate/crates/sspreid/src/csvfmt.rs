//! Plain CSV files: loss curves, split listings and distance matrices.
//!
//! Floats are written in Rust's shortest round-trip form, so parsing a
//! written file recovers every value exactly.

use std::fmt::Write as _;

use sspreid_core::model::{EpochLoss, LossMode, Split};
use sspreid_core::DistanceMatrix;

use crate::error::DecodeError;

pub fn encode_curve(curve: &[EpochLoss], mode: LossMode) -> String {
    let with_trip = mode == LossMode::CrossPlusTriplet;
    let mut s = String::from(if with_trip {
        "epoch,crosse,trip,lr\n"
    } else {
        "epoch,crosse,lr\n"
    });
    for e in curve {
        write!(s, "{},{}", e.epoch, e.crosse).unwrap();
        if with_trip {
            write!(s, ",{}", e.trip.unwrap_or(0.0)).unwrap();
        }
        writeln!(s, ",{}", e.lr).unwrap();
    }
    s
}

fn field<T: std::str::FromStr>(line: usize, name: &str, v: Option<&str>) -> Result<T, DecodeError> {
    v.and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| DecodeError::Content(format!("line {line}: bad or missing {name}")))
}

pub fn decode_curve(text: &str) -> Result<Vec<EpochLoss>, DecodeError> {
    let mut lines = text.lines();
    let with_trip = match lines.next() {
        Some("epoch,crosse,trip,lr") => true,
        Some("epoch,crosse,lr") => false,
        _ => return Err(DecodeError::Header("expected a loss-curve header".into())),
    };
    lines
        .enumerate()
        .map(|(i, l)| {
            let mut it = l.split(',');
            let line = i + 2;
            let epoch = field(line, "epoch", it.next())?;
            let crosse = field(line, "crosse", it.next())?;
            let trip = if with_trip {
                Some(field(line, "trip", it.next())?)
            } else {
                None
            };
            let lr = field(line, "lr", it.next())?;
            if it.next().is_some() {
                return Err(DecodeError::Content(format!("line {line}: extra columns")));
            }
            Ok(EpochLoss {
                epoch,
                crosse,
                trip,
                lr,
            })
        })
        .collect()
}

/// One row of `split.csv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRow {
    pub name: String,
    pub split: Split,
    pub person_id: u32,
    pub camera_id: u16,
}

pub const SPLIT_HEADER: &str = "name,split,person_id,camera_id";

pub fn encode_split(rows: &[SplitRow]) -> String {
    let mut s = format!("{SPLIT_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{}",
            r.name,
            r.split.as_str(),
            r.person_id,
            r.camera_id
        )
        .unwrap();
    }
    s
}

pub fn decode_split(text: &str) -> Result<Vec<SplitRow>, DecodeError> {
    let mut lines = text.lines();
    if lines.next() != Some(SPLIT_HEADER) {
        return Err(DecodeError::Header(format!(
            "expected header `{SPLIT_HEADER}`"
        )));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let line = i + 2;
            let cols: Vec<&str> = l.split(',').collect();
            let [name, split, pid, cam] = cols[..] else {
                return Err(DecodeError::Content(format!(
                    "line {line}: expected 4 columns"
                )));
            };
            if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
                return Err(DecodeError::Content(format!(
                    "line {line}: bad image name `{name}`"
                )));
            }
            Ok(SplitRow {
                name: name.to_string(),
                split: Split::parse(split).ok_or_else(|| {
                    DecodeError::Content(format!("line {line}: unknown split `{split}`"))
                })?,
                person_id: field(line, "person_id", Some(pid))?,
                camera_id: field(line, "camera_id", Some(cam))?,
            })
        })
        .collect()
}

/// Rows are queries, columns gallery entries; no header.
pub fn encode_matrix(m: &DistanceMatrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn decode_matrix(text: &str) -> Result<DistanceMatrix, DecodeError> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, l) in text.lines().enumerate() {
        let row: Vec<f64> = l
            .split(',')
            .map(|v| field(i + 1, "distance", Some(v)))
            .collect::<Result<_, _>>()?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(DecodeError::Content(format!("line {}: ragged row", i + 1)));
        }
        data.extend(row);
        rows += 1;
    }
    DistanceMatrix::new(rows, cols.unwrap_or(0), data)
        .map_err(|e| DecodeError::Content(e.to_string()))
}
