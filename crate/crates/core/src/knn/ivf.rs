use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kmeans::kmeans;
use super::{by_distance_then_id, squared_l2, NeighborList};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

/// Construction parameters of an inverted-file index.
#[derive(Clone, Debug)]
pub struct IvfParams {
    pub n_lists: usize,
    /// Lloyd iterations of the coarse quantizer.
    pub train_iters: usize,
    pub seed: u64,
    /// Training uses at most this many points per list (sampled).
    pub max_train_per_list: usize,
}

impl IvfParams {
    pub fn new(n_lists: usize) -> Self {
        Self {
            n_lists,
            train_iters: 25,
            seed: 0,
            max_train_per_list: 256,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_train_iters(mut self, iters: usize) -> Self {
        self.train_iters = iters;
        self
    }
}

#[derive(Clone, Debug, Default)]
struct InvertedList {
    ids: Vec<u32>,
    /// Full-precision payloads, row-major.
    vectors: Vec<f32>,
}

/// Inverted-file index with uncompressed payloads: every scanned candidate
/// gets its exact distance, so the only approximation is which lists are
/// visited.
#[derive(Clone, Debug)]
pub struct IvfIndex {
    dim: usize,
    centroids: FeatureMatrix,
    lists: Vec<InvertedList>,
    n_total: usize,
}

impl IvfIndex {
    pub fn n_lists(&self) -> usize {
        self.lists.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n_total
    }

    pub fn is_empty(&self) -> bool {
        self.n_total == 0
    }

    pub fn centroids(&self) -> &FeatureMatrix {
        &self.centroids
    }

    /// Ids stored in list `l`.
    pub fn list_ids(&self, l: usize) -> &[u32] {
        &self.lists[l].ids
    }

    /// Probe setting used when none is given: a quarter of the lists.
    pub fn default_n_probe(&self) -> usize {
        (self.n_lists() / 4).max(1)
    }

    /// Lists to visit for `query`, nearest centroid first.
    fn probe_order(&self, query: &[f32], n_probe: usize) -> Vec<usize> {
        let mut cd: Vec<(f32, u32)> = self
            .centroids
            .rows()
            .enumerate()
            .map(|(c, row)| (squared_l2(query, row), c as u32))
            .collect();
        cd.sort_unstable_by(by_distance_then_id);
        cd.into_iter().take(n_probe).map(|(_, c)| c as usize).collect()
    }
}

/// Trains the coarse quantizer with k-means and files every corpus vector
/// under its nearest centroid. Ids are corpus row indices.
pub fn build_ivf(corpus: &FeatureMatrix, params: &IvfParams) -> Result<IvfIndex> {
    let (n, d) = (corpus.n_rows(), corpus.dim());
    if params.n_lists == 0 || params.n_lists > n {
        return Err(Error::Parameter(format!(
            "n_lists = {} must lie in 1..={n}",
            params.n_lists
        )));
    }
    if n > u32::MAX as usize {
        return Err(Error::Parameter("corpus too large for 32-bit ids".into()));
    }
    let cap = params.n_lists.saturating_mul(params.max_train_per_list.max(1));
    let centroids = if n > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_1f1f);
        let mut sample = rand::seq::index::sample(&mut rng, n, cap).into_vec();
        sample.sort_unstable();
        kmeans(&corpus.select_rows(&sample), params.n_lists, params.train_iters, params.seed)?.centroids
    } else {
        kmeans(corpus, params.n_lists, params.train_iters, params.seed)?.centroids
    };

    let assignment: Vec<u32> = (0..n)
        .into_par_iter()
        .map(|i| super::kmeans::nearest_centroid(corpus.row(i), &centroids))
        .collect();
    let mut lists = vec![InvertedList::default(); params.n_lists];
    for (i, &a) in assignment.iter().enumerate() {
        let l = &mut lists[a as usize];
        l.ids.push(i as u32);
        l.vectors.extend_from_slice(corpus.row(i));
    }
    Ok(IvfIndex {
        dim: d,
        centroids,
        lists,
        n_total: n,
    })
}

/// Searches the `n_probe` lists nearest to each query. Rows with fewer than
/// `k` candidates are padded with [`super::SENTINEL`].
pub fn ivf_search(index: &IvfIndex, queries: &FeatureMatrix, k: usize, n_probe: usize) -> Result<NeighborList> {
    if n_probe == 0 {
        return Err(Error::Parameter("n_probe must be at least 1".into()));
    }
    if queries.dim() != index.dim && !queries.is_empty() {
        return Err(Error::shape("ivf_search", index.dim, queries.dim()));
    }
    if k > index.n_total {
        return Err(Error::Parameter(format!("k = {k} exceeds indexed count {}", index.n_total)));
    }
    let n_probe = n_probe.min(index.n_lists());
    let d = index.dim;
    let rows: Vec<Vec<(f32, u32)>> = (0..queries.n_rows())
        .into_par_iter()
        .map(|q| {
            let query = queries.row(q);
            let mut cand: Vec<(f32, u32)> = Vec::new();
            for l in index.probe_order(query, n_probe) {
                let list = &index.lists[l];
                for (j, &id) in list.ids.iter().enumerate() {
                    cand.push((squared_l2(query, &list.vectors[j * d..(j + 1) * d]), id));
                }
            }
            if k > 0 && k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_distance_then_id);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_distance_then_id);
            cand.truncate(k);
            cand
        })
        .collect();
    Ok(NeighborList::from_rows(k, &rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::{brute_force_knn, SENTINEL};

    fn grid(n: usize) -> FeatureMatrix {
        let rows: Vec<[f32; 2]> = (0..n).map(|i| [(i % 7) as f32, (i / 7) as f32 * 0.5]).collect();
        FeatureMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_list_equals_brute_force() {
        let f = grid(40);
        let idx = build_ivf(&f, &IvfParams::new(1)).unwrap();
        assert_eq!(idx.list_ids(0).len(), 40);
        assert_eq!(ivf_search(&idx, &f, 5, 1).unwrap(), brute_force_knn(&f, &f, 5).unwrap());
    }

    #[test]
    fn full_probe_is_exact() {
        let f = grid(60);
        let idx = build_ivf(&f, &IvfParams::new(60)).unwrap();
        let exact = brute_force_knn(&f, &f, 6).unwrap();
        assert_eq!(ivf_search(&idx, &f, 6, 60).unwrap(), exact);
        let total: usize = (0..idx.n_lists()).map(|l| idx.list_ids(l).len()).sum();
        assert_eq!(total, 60);
    }

    #[test]
    fn sentinel_padding() {
        let rows: Vec<[f32; 1]> = (0..20).map(|i| [if i < 10 { i as f32 * 0.01 } else { 100.0 + i as f32 * 0.01 }]).collect();
        let f = FeatureMatrix::from_rows(&rows).unwrap();
        let idx = build_ivf(&f, &IvfParams::new(2)).unwrap();
        let nl = ivf_search(&idx, &f.select_rows(&[0]), 15, 1).unwrap();
        assert_eq!(nl.valid(0).count(), 10);
        assert_eq!(nl.row(0).0[14], SENTINEL);
    }

    #[test]
    fn errors() {
        let f = grid(10);
        assert!(build_ivf(&f, &IvfParams::new(11)).is_err());
        let idx = build_ivf(&f, &IvfParams::new(2)).unwrap();
        assert!(matches!(ivf_search(&idx, &f, 3, 0), Err(Error::Parameter(_))));
    }
}
