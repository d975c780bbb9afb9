//! Exact and inverted-file k-nearest-neighbor search.
//!
//! Distances are squared Euclidean. On L2-normalized descriptors this ranks
//! neighbors exactly like cosine similarity.

mod brute;
mod ivf;
mod kmeans;

use std::cmp::Ordering;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

pub use brute::brute_force_knn;
pub use ivf::{build_ivf, ivf_search, IvfIndex, IvfParams};
pub use kmeans::{kmeans, KMeansResult};

use crate::error::{Error, Result};
use crate::matrix::format::{expect_magic, expect_version};

/// Id used to pad rows that found fewer than `k` candidates.
pub const SENTINEL: u32 = u32::MAX;

const KNNL_MAGIC: &[u8; 4] = b"KNNL";
const KNNL_VERSION: u32 = 1;

/// Squared Euclidean distance, accumulated in 64 bits and rounded once.
/// Every search path goes through this function so exact and approximate
/// searches report bit-identical distances.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let t = f64::from(*x) - f64::from(*y);
        acc += t * t;
    }
    acc as f32
}

/// Total order on `(distance, id)`: ascending distance, ties to the lower id.
#[inline]
pub(crate) fn by_distance_then_id(a: &(f32, u32), b: &(f32, u32)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Per-query neighbor ids and a per-edge scalar. After search the scalar is
/// the squared distance (ascending within a row); after edge weighting it is
/// the edge weight.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    query_count: usize,
    k: usize,
    indices: Vec<u32>,
    distances: Vec<f32>,
}

impl NeighborList {
    pub fn new(query_count: usize, k: usize, indices: Vec<u32>, distances: Vec<f32>) -> Result<Self> {
        if indices.len() != query_count * k || distances.len() != query_count * k {
            return Err(Error::shape(
                "NeighborList::new",
                query_count * k,
                format!("{} ids / {} distances", indices.len(), distances.len()),
            ));
        }
        Ok(Self {
            query_count,
            k,
            indices,
            distances,
        })
    }

    /// Builds a list from per-query rows, padding short rows with sentinels.
    pub fn from_rows(k: usize, rows: &[Vec<(f32, u32)>]) -> Self {
        let mut indices = Vec::with_capacity(rows.len() * k);
        let mut distances = Vec::with_capacity(rows.len() * k);
        for row in rows {
            for &(d, id) in row.iter().take(k) {
                indices.push(id);
                distances.push(d);
            }
            for _ in row.len().min(k)..k {
                indices.push(SENTINEL);
                distances.push(f32::INFINITY);
            }
        }
        Self {
            query_count: rows.len(),
            k,
            indices,
            distances,
        }
    }

    pub fn empty(k: usize) -> Self {
        Self {
            query_count: 0,
            k,
            indices: Vec::new(),
            distances: Vec::new(),
        }
    }

    pub fn query_count(&self) -> usize {
        self.query_count
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn distances(&self) -> &[f32] {
        &self.distances
    }

    #[inline]
    pub fn row(&self, q: usize) -> (&[u32], &[f32]) {
        let r = q * self.k..(q + 1) * self.k;
        (&self.indices[r.clone()], &self.distances[r])
    }

    /// Non-sentinel `(distance, id)` pairs of row `q`.
    pub fn valid(&self, q: usize) -> impl Iterator<Item = (f32, u32)> + '_ {
        let (ids, ds) = self.row(q);
        ids.iter()
            .zip(ds)
            .filter(|(&id, _)| id != SENTINEL)
            .map(|(&id, &d)| (d, id))
    }

    /// True when every row is ascending in distance with no duplicate id.
    pub fn is_well_formed(&self) -> bool {
        (0..self.query_count).all(|q| {
            let (ids, ds) = self.row(q);
            let sorted = ds.windows(2).all(|w| w[0] <= w[1]);
            let mut seen: Vec<u32> = ids.iter().copied().filter(|&i| i != SENTINEL).collect();
            let n = seen.len();
            seen.sort_unstable();
            seen.dedup();
            sorted && seen.len() == n
        })
    }

    /// Mean fraction of each exact row's ids recovered by `self`.
    pub fn recall_against(&self, exact: &NeighborList) -> f64 {
        if exact.query_count == 0 {
            return 1.0;
        }
        let mut hit = 0usize;
        let mut total = 0usize;
        for q in 0..exact.query_count {
            let mine: Vec<u32> = self.valid(q).map(|(_, id)| id).collect();
            for (_, id) in exact.valid(q) {
                total += 1;
                if mine.contains(&id) {
                    hit += 1;
                }
            }
        }
        if total == 0 {
            1.0
        } else {
            hit as f64 / total as f64
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(KNNL_MAGIC)?;
        w.write_u32::<LittleEndian>(KNNL_VERSION)?;
        w.write_u64::<LittleEndian>(self.query_count as u64)?;
        w.write_u32::<LittleEndian>(self.k as u32)?;
        for (&id, &d) in self.indices.iter().zip(&self.distances) {
            w.write_u32::<LittleEndian>(id)?;
            w.write_f32::<LittleEndian>(d)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, KNNL_MAGIC)?;
        expect_version(&mut r, KNNL_VERSION)?;
        let query_count = r.read_u64::<LittleEndian>()? as usize;
        let k = r.read_u32::<LittleEndian>()? as usize;
        let total = query_count
            .checked_mul(k)
            .ok_or_else(|| Error::Format("KNNL size overflow".into()))?;
        let mut indices = Vec::with_capacity(total);
        let mut distances = Vec::with_capacity(total);
        for _ in 0..total {
            let id = r
                .read_u32::<LittleEndian>()
                .map_err(|e| Error::Format(format!("truncated KNNL payload: {e}")))?;
            let d = r
                .read_f32::<LittleEndian>()
                .map_err(|e| Error::Format(format!("truncated KNNL payload: {e}")))?;
            indices.push(id);
            distances.push(d);
        }
        Self::new(query_count, k, indices, distances)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_and_valid() {
        let nl = NeighborList::from_rows(3, &[vec![(0.0, 4), (1.0, 2)], vec![]]);
        assert_eq!(nl.row(0).0, &[4, 2, SENTINEL]);
        assert_eq!(nl.valid(0).count(), 2);
        assert_eq!(nl.valid(1).count(), 0);
        assert!(nl.is_well_formed());
    }

    #[test]
    fn knnl_layout() {
        let nl = NeighborList::from_rows(2, &[vec![(0.0, 1), (0.5, 0)]]);
        let mut buf = Vec::new();
        nl.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"KNNL");
        assert_eq!(buf.len(), 4 + 4 + 8 + 4 + 2 * 8);
        assert_eq!(NeighborList::read_from(&buf[..]).unwrap(), nl);
    }

    #[test]
    fn recall_counts_hits() {
        let exact = NeighborList::from_rows(2, &[vec![(0.0, 1), (1.0, 2)]]);
        let approx = NeighborList::from_rows(2, &[vec![(0.0, 1), (2.0, 7)]]);
        assert_eq!(approx.recall_against(&exact), 0.5);
    }
}
