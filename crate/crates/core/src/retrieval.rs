//! Euclidean ranking of a gallery against queries and mAP / CMC scoring.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// Identity and camera of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EntryLabel {
    pub person_id: u32,
    pub camera_id: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry<T> {
    pub person_id: u32,
    pub camera_id: u16,
    pub feature: Vec<T>,
}

impl<T> GalleryEntry<T> {
    pub fn new(person_id: u32, camera_id: u16, feature: Vec<T>) -> Self {
        Self {
            person_id,
            camera_id,
            feature,
        }
    }

    pub fn label(&self) -> EntryLabel {
        EntryLabel {
            person_id: self.person_id,
            camera_id: self.camera_id,
        }
    }
}

/// Gallery filtering applied before ranking each query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Protocol {
    /// Drop gallery entries sharing both identity and camera with the query.
    #[default]
    Market,
    /// Rank the full gallery.
    None,
}

impl Protocol {
    #[inline]
    fn keeps(self, query: EntryLabel, candidate: EntryLabel) -> bool {
        match self {
            Protocol::Market => {
                !(query.person_id == candidate.person_id && query.camera_id == candidate.camera_id)
            }
            Protocol::None => true,
        }
    }
}

/// Dense row-major `rows x cols` matrix of distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn check_dims<T, V: AsRef<[T]>>(sets: &[&[V]]) -> Result<usize> {
    let mut dim = None;
    for set in sets {
        for v in set.iter() {
            let len = v.as_ref().len();
            match dim {
                None => dim = Some(len),
                Some(d) if d != len => {
                    return Err(Error::invalid(format!(
                        "feature dimension mismatch: {d} vs {len}"
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(dim.unwrap_or(0))
}

/// Pairwise Euclidean distances, accumulated in `f64`.
pub fn distance_matrix<T: Real, V: AsRef<[T]>>(
    queries: &[V],
    gallery: &[V],
) -> Result<DistanceMatrix> {
    check_dims::<T, V>(&[queries, gallery])?;
    let mut data = Vec::with_capacity(queries.len() * gallery.len());
    for q in queries {
        let q = q.as_ref();
        for g in gallery {
            let sq: f64 = q
                .iter()
                .zip(g.as_ref())
                .map(|(a, b)| {
                    let d = a.to_wide() - b.to_wide();
                    d * d
                })
                .sum();
            data.push(libm::sqrt(sq));
        }
    }
    DistanceMatrix::new(queries.len(), gallery.len(), data)
}

/// Gallery indices in ascending distance order with relevance flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: u32,
    pub entries: Vec<usize>,
    pub distances: Vec<f64>,
    pub relevance: Vec<bool>,
}

impl RankedList {
    pub fn relevant_count(&self) -> usize {
        self.relevance.iter().filter(|&&r| r).count()
    }

    /// Zero-based position of the first relevant entry.
    pub fn first_hit(&self) -> Option<usize> {
        self.relevance.iter().position(|&r| r)
    }
}

/// Ranks one row of precomputed distances. Ties go to the lower gallery index.
pub fn rank_distances(
    query_index: usize,
    query: EntryLabel,
    distances: &[f64],
    gallery: &[EntryLabel],
    protocol: Protocol,
) -> Result<RankedList> {
    if distances.len() != gallery.len() {
        return Err(Error::invalid("distance row and gallery lengths differ"));
    }
    let mut entries: Vec<usize> = (0..gallery.len())
        .filter(|&j| protocol.keeps(query, gallery[j]))
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyGallery { query: query_index });
    }
    entries.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let distances = entries.iter().map(|&j| distances[j]).collect();
    let relevance = entries
        .iter()
        .map(|&j| gallery[j].person_id == query.person_id)
        .collect();
    Ok(RankedList {
        query_id: query.person_id,
        entries,
        distances,
        relevance,
    })
}

/// Ranks the gallery against a single query entry.
pub fn rank<T: Real>(
    query: &GalleryEntry<T>,
    gallery: &[GalleryEntry<T>],
    protocol: Protocol,
) -> Result<RankedList> {
    let features: Vec<&[T]> = gallery.iter().map(|g| g.feature.as_slice()).collect();
    let dist = distance_matrix::<T, &[T]>(&[query.feature.as_slice()], &features)?;
    let labels: Vec<EntryLabel> = gallery.iter().map(GalleryEntry::label).collect();
    rank_distances(0, query.label(), dist.row(0), &labels, protocol)
}

/// Mean of precision-at-k over the positions of relevant entries.
pub fn average_precision(list: &RankedList) -> Result<f64> {
    average_precision_flags(&list.relevance)
}

pub fn average_precision_flags(relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedAp);
    }
    Ok(sum / hits as f64)
}

/// Aggregate retrieval quality.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map: f64,
    /// `cmc[r - 1]` is the fraction of queries with a hit in the top `r`.
    pub cmc: Vec<f64>,
    pub valid_queries: usize,
    /// Queries dropped for lacking any relevant gallery entry after filtering.
    pub skipped_queries: usize,
}

impl EvalReport {
    pub fn rank1(&self) -> f64 {
        self.cmc[0]
    }

    pub fn cmc_at(&self, r: usize) -> f64 {
        self.cmc[r - 1]
    }
}

pub const DEFAULT_MAX_RANK: usize = 50;

/// mAP and CMC over a precomputed `queries x gallery` distance matrix.
pub fn evaluate_distances(
    dist: &DistanceMatrix,
    queries: &[EntryLabel],
    gallery: &[EntryLabel],
    protocol: Protocol,
    max_rank: usize,
) -> Result<EvalReport> {
    if max_rank == 0 {
        return Err(Error::invalid("max_rank must be positive"));
    }
    if dist.rows() != queries.len() || dist.cols() != gallery.len() {
        return Err(Error::invalid(format!(
            "distance matrix {}x{} does not match {} queries x {} gallery",
            dist.rows(),
            dist.cols(),
            queries.len(),
            gallery.len()
        )));
    }
    let mut ap_sum = 0.0;
    let mut hits = vec![0usize; max_rank];
    let mut valid = 0usize;
    let mut skipped = 0usize;
    for (i, &q) in queries.iter().enumerate() {
        let list = match rank_distances(i, q, dist.row(i), gallery, protocol) {
            Ok(list) => list,
            Err(Error::EmptyGallery { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let Some(first) = list.first_hit() else {
            skipped += 1;
            continue;
        };
        valid += 1;
        ap_sum += average_precision(&list)?;
        if first < max_rank {
            for h in &mut hits[first..] {
                *h += 1;
            }
        }
    }
    if valid == 0 {
        return Err(Error::NoValidQueries { skipped });
    }
    Ok(EvalReport {
        map: ap_sum / valid as f64,
        cmc: hits.iter().map(|&h| h as f64 / valid as f64).collect(),
        valid_queries: valid,
        skipped_queries: skipped,
    })
}

/// Ranks every query against the gallery and scores the lists.
pub fn evaluate<T: Real>(
    queries: &[GalleryEntry<T>],
    gallery: &[GalleryEntry<T>],
    protocol: Protocol,
    max_rank: usize,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::NoValidQueries { skipped: 0 });
    }
    let qf: Vec<&[T]> = queries.iter().map(|e| e.feature.as_slice()).collect();
    let gf: Vec<&[T]> = gallery.iter().map(|e| e.feature.as_slice()).collect();
    let dist = distance_matrix::<T, &[T]>(&qf, &gf)?;
    let ql: Vec<EntryLabel> = queries.iter().map(GalleryEntry::label).collect();
    let gl: Vec<EntryLabel> = gallery.iter().map(GalleryEntry::label).collect();
    evaluate_distances(&dist, &ql, &gl, protocol, max_rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(pid: u32, cam: u16, f: &[f64]) -> GalleryEntry<f64> {
        GalleryEntry::new(pid, cam, f.to_vec())
    }

    #[test]
    fn distance_basics() {
        let d = distance_matrix::<f64, _>(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap();
        assert_eq!(d.data(), &[0.0]);
        let d = distance_matrix::<f64, _>(&[vec![0.0, 0.0]], &[vec![3.0, 4.0]]).unwrap();
        assert_eq!(d.data(), &[5.0]);
        assert!(distance_matrix::<f64, _>(&[vec![0.0]], &[vec![3.0, 4.0]]).is_err());
    }

    #[test]
    fn singleton_gallery() {
        let l = rank(&e(1, 0, &[0.0]), &[e(1, 1, &[2.0])], Protocol::Market).unwrap();
        assert_eq!(l.entries, vec![0]);
        assert_eq!(l.relevance, vec![true]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let g = [e(2, 1, &[-1.0]), e(3, 1, &[1.0])];
        let l = rank(&e(1, 0, &[0.0]), &g, Protocol::Market).unwrap();
        assert_eq!(l.entries, vec![0, 1]);
    }

    #[test]
    fn same_camera_only_match_is_protocol_error() {
        let err = rank(&e(1, 0, &[0.0]), &[e(1, 0, &[0.5])], Protocol::Market).unwrap_err();
        assert!(matches!(err, Error::EmptyGallery { .. }));
        assert!(rank(&e(1, 0, &[0.0]), &[e(1, 0, &[0.5])], Protocol::None).is_ok());
    }

    #[test]
    fn ap_hand_values() {
        assert_eq!(average_precision_flags(&[true, true, true]).unwrap(), 1.0);
        assert!((average_precision_flags(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision_flags(&[false, true]).unwrap(), 0.5);
        assert_eq!(
            average_precision_flags(&[false, false]),
            Err(Error::UndefinedAp)
        );
    }

    #[test]
    fn perfect_single_query() {
        let r = evaluate(
            &[e(1, 0, &[0.0])],
            &[e(1, 1, &[0.1]), e(2, 1, &[5.0])],
            Protocol::Market,
            DEFAULT_MAX_RANK,
        )
        .unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.rank1(), 1.0);
    }

    #[test]
    fn cmc_counts_first_hits() {
        let g = [e(1, 1, &[0.0]), e(2, 1, &[1.0])];
        // query 1 hits at rank 1, query 2 at rank 2
        let q = [e(1, 0, &[0.1]), e(2, 0, &[0.2])];
        let r = evaluate(&q, &g, Protocol::Market, 2).unwrap();
        assert_eq!(r.cmc, vec![0.5, 1.0]);
    }

    #[test]
    fn queries_without_match_are_skipped() {
        let g = [e(1, 1, &[0.0])];
        let q = [e(1, 0, &[0.0]), e(9, 0, &[0.0])];
        let r = evaluate(&q, &g, Protocol::Market, 1).unwrap();
        assert_eq!((r.valid_queries, r.skipped_queries), (1, 1));
        let none = evaluate(&[e(9, 0, &[0.0])], &g, Protocol::Market, 1).unwrap_err();
        assert_eq!(none, Error::NoValidQueries { skipped: 1 });
    }
}
