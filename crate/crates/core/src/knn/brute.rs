use rayon::prelude::*;

use super::{by_distance_then_id, squared_l2, NeighborList};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

/// Exact k-NN of every query row among the corpus rows.
///
/// Rows are sorted by ascending squared distance with ties going to the lower
/// corpus index, so the output does not depend on scheduling.
pub fn brute_force_knn(queries: &FeatureMatrix, corpus: &FeatureMatrix, k: usize) -> Result<NeighborList> {
    if queries.dim() != corpus.dim() && !queries.is_empty() {
        return Err(Error::shape("brute_force_knn", corpus.dim(), queries.dim()));
    }
    if k > corpus.n_rows() {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds corpus size {}",
            corpus.n_rows()
        )));
    }
    if corpus.n_rows() > u32::MAX as usize {
        return Err(Error::Parameter("corpus too large for 32-bit ids".into()));
    }
    let rows: Vec<Vec<(f32, u32)>> = (0..queries.n_rows())
        .into_par_iter()
        .map(|q| top_k(queries.row(q), corpus, k))
        .collect();
    Ok(NeighborList::from_rows(k, &rows))
}

fn top_k(query: &[f32], corpus: &FeatureMatrix, k: usize) -> Vec<(f32, u32)> {
    if k == 0 {
        return Vec::new();
    }
    let mut all: Vec<(f32, u32)> = corpus
        .rows()
        .enumerate()
        .map(|(j, row)| (squared_l2(query, row), j as u32))
        .collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_distance_then_id);
        all.truncate(k);
    }
    all.sort_unstable_by(by_distance_then_id);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_points() {
        let f = FeatureMatrix::from_rows(&[[0.0f32, 0.0], [1.0, 0.0], [5.0, 0.0]]).unwrap();
        let nl = brute_force_knn(&f, &f, 2).unwrap();
        assert_eq!(nl.row(0), (&[0u32, 1][..], &[0.0f32, 1.0][..]));
        assert_eq!(nl.row(2), (&[2u32, 1][..], &[0.0f32, 16.0][..]));
    }

    #[test]
    fn exhaustive_k() {
        let f = FeatureMatrix::from_rows(&[[0.0f32], [3.0], [1.0], [1.0]]).unwrap();
        let nl = brute_force_knn(&f, &f, 4).unwrap();
        // tie between rows 2 and 3 resolved by index
        assert_eq!(nl.row(0).0, &[0, 2, 3, 1]);
        assert_eq!(nl.row(2).0, &[2, 3, 0, 1]);
        assert!(nl.is_well_formed());
    }

    #[test]
    fn k_too_large() {
        let f = FeatureMatrix::zeros(2, 1);
        assert!(matches!(brute_force_knn(&f, &f, 3), Err(Error::Parameter(_))));
    }
}
