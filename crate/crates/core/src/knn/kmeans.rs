//! Seeded Lloyd k-means with k-means++ initialization (coarse quantizer).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::squared_l2;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub centroids: FeatureMatrix,
    pub assignment: Vec<u32>,
}

/// Index of the nearest centroid, ties to the lower index.
pub(crate) fn nearest_centroid(x: &[f32], centroids: &FeatureMatrix) -> u32 {
    let mut best = (f32::INFINITY, 0u32);
    for (c, row) in centroids.rows().enumerate() {
        let d = squared_l2(x, row);
        if d < best.0 {
            best = (d, c as u32);
        }
    }
    best.1
}

pub fn kmeans(data: &FeatureMatrix, k: usize, iters: usize, seed: u64) -> Result<KMeansResult> {
    let (n, d) = (data.n_rows(), data.dim());
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k-means needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids: Vec<f32> = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(data.row(first));
    let mut closest: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| f64::from(squared_l2(data.row(i), data.row(first))))
        .collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick).to_vec();
        closest.par_iter_mut().enumerate().for_each(|(i, best)| {
            let dd = f64::from(squared_l2(data.row(i), &c));
            if dd < *best {
                *best = dd;
            }
        });
        centroids.extend_from_slice(&c);
    }
    let mut centroids = FeatureMatrix::new(k, d, centroids)?;

    let mut assignment = vec![0u32; n];
    for _ in 0..iters {
        assignment = (0..n)
            .into_par_iter()
            .map(|i| nearest_centroid(data.row(i), &centroids))
            .collect();
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            let a = a as usize;
            counts[a] += 1;
            for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(data.row(i)) {
                *s += f64::from(v);
            }
        }
        let mut next = centroids.as_slice().to_vec();
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                for j in 0..d {
                    next[c * d + j] = (sums[c * d + j] / counts[c] as f64) as f32;
                }
            }
        }
        centroids = FeatureMatrix::new(k, d, next)?;
    }
    assignment = (0..n)
        .into_par_iter()
        .map(|i| nearest_centroid(data.row(i), &centroids))
        .collect();
    Ok(KMeansResult { centroids, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_groups() {
        let rows: Vec<[f32; 2]> = (0..10)
            .map(|i| if i < 5 { [i as f32 * 0.01, 0.0] } else { [10.0 + i as f32 * 0.01, 0.0] })
            .collect();
        let r = kmeans(&FeatureMatrix::from_rows(&rows).unwrap(), 2, 10, 7).unwrap();
        assert!(r.assignment[..5].iter().all(|&a| a == r.assignment[0]));
        assert!(r.assignment[5..].iter().all(|&a| a == r.assignment[5]));
        assert_ne!(r.assignment[0], r.assignment[5]);
    }

    #[test]
    fn deterministic_under_seed() {
        let rows: Vec<[f32; 2]> = (0..50).map(|i| [(i * 37 % 11) as f32, (i * 13 % 7) as f32]).collect();
        let f = FeatureMatrix::from_rows(&rows).unwrap();
        let a = kmeans(&f, 4, 5, 1).unwrap();
        let b = kmeans(&f, 4, 5, 1).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignment, b.assignment);
    }
}
