use rayon::prelude::*;

use super::eta::validate_gamma;
use crate::error::{Error, Result};
use crate::matrix::SparseRowMatrix;

#[derive(Clone, Debug)]
pub struct MclConfig {
    pub r: f64,
    pub n_iters: usize,
    /// Entries below this value are dropped after each inflation.
    pub prune: f64,
    /// Abort when nnz exceeds this multiple of the input nnz.
    pub density_factor: usize,
}

impl MclConfig {
    pub fn new(r: f64, n_iters: usize) -> Self {
        Self {
            r,
            n_iters,
            prune: 1e-6,
            density_factor: 64,
        }
    }
}

/// Markov-clustering iterations `W ← Γ_r(W·W)` with default pruning.
pub fn mcl_iterate(w: &SparseRowMatrix, r: f64, n_iters: usize) -> Result<SparseRowMatrix> {
    mcl_iterate_with(w, &MclConfig::new(r, n_iters))
}

pub fn mcl_iterate_with(w: &SparseRowMatrix, cfg: &MclConfig) -> Result<SparseRowMatrix> {
    validate_gamma(cfg.r)?;
    if w.n_rows() != w.n_cols() {
        return Err(Error::shape("mcl_iterate", "square matrix", format!("{}x{}", w.n_rows(), w.n_cols())));
    }
    let cap = w.nnz().max(1).saturating_mul(cfg.density_factor);
    let mut cur = w.clone();
    for it in 1..=cfg.n_iters {
        let sq = sparse_square(&cur);
        if sq.iter().map(Vec::len).sum::<usize>() > cap {
            return Err(Error::DensityCap {
                iteration: it,
                nnz: sq.iter().map(Vec::len).sum(),
                cap,
            });
        }
        cur = inflate(sq, cur.n_cols(), cfg.r, cfg.prune)?;
    }
    Ok(cur)
}

/// Row-wise Gustavson product `A·A` with a dense accumulator per worker.
fn sparse_square(a: &SparseRowMatrix) -> Vec<Vec<(u32, f64)>> {
    let n = a.n_cols();
    (0..a.n_rows())
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; n], vec![false; n]),
            |(acc, seen), i| {
                let mut touched: Vec<u32> = Vec::new();
                let (cols, vals) = a.row(i);
                for (&k, &v) in cols.iter().zip(vals) {
                    let (kc, kv) = a.row(k as usize);
                    for (&j, &u) in kc.iter().zip(kv) {
                        let j_ = j as usize;
                        if !seen[j_] {
                            seen[j_] = true;
                            touched.push(j);
                        }
                        acc[j_] += f64::from(v) * f64::from(u);
                    }
                }
                touched.sort_unstable();
                touched
                    .into_iter()
                    .map(|j| {
                        let j_ = j as usize;
                        let v = acc[j_];
                        acc[j_] = 0.0;
                        seen[j_] = false;
                        (j, v)
                    })
                    .collect()
            },
        )
        .collect()
}

/// Element-wise power, column L1 normalization, then pruning.
fn inflate(mut rows: Vec<Vec<(u32, f64)>>, n_cols: usize, r: f64, prune: f64) -> Result<SparseRowMatrix> {
    let mut col_sums = vec![0.0f64; n_cols];
    for row in &mut rows {
        for (j, v) in row.iter_mut() {
            *v = v.powf(r);
            col_sums[*j as usize] += *v;
        }
    }
    let out: Vec<Vec<(u32, f32)>> = rows
        .into_iter()
        .map(|row| {
            row.into_iter()
                .filter_map(|(j, v)| {
                    let s = col_sums[j as usize];
                    let x = if s > 0.0 { v / s } else { v };
                    (x >= prune).then_some((j, x as f32))
                })
                .collect()
        })
        .collect();
    SparseRowMatrix::from_rows(n_cols, out)
}

/// Labels of the connected components of the undirected support of `w`,
/// numbered in order of their smallest node.
pub fn connected_components(w: &SparseRowMatrix) -> Vec<usize> {
    let n = w.n_rows().max(w.n_cols());
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..w.n_rows() {
        for &j in w.row(i).0 {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j as usize));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    (0..n)
        .map(|i| {
            let root = find(&mut parent, i);
            if label[root] == usize::MAX {
                label[root] = next;
                next += 1;
            }
            label[root]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_edges(n: usize, edges: &[(u32, u32, f32)]) -> SparseRowMatrix {
        let mut rows = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            rows[a as usize].push((b, w));
            rows[b as usize].push((a, w));
        }
        SparseRowMatrix::from_rows(n, rows).unwrap()
    }

    #[test]
    fn identity_is_fixed_point() {
        let id = SparseRowMatrix::identity(5);
        assert_eq!(mcl_iterate(&id, 2.0, 7).unwrap(), id);
    }

    #[test]
    fn disconnected_cliques_stay_apart() {
        let w = from_edges(4, &[(0, 1, 0.5), (2, 3, 0.5), (0, 0, 0.25), (2, 2, 0.25)]);
        let out = mcl_iterate(&w, 1.5, 5).unwrap();
        for i in 0..2 {
            assert!(out.row(i).0.iter().all(|&j| j < 2));
        }
        for i in 2..4 {
            assert!(out.row(i).0.iter().all(|&j| j >= 2));
        }
    }

    #[test]
    fn density_cap_and_parameter_errors() {
        let n = 30;
        let rows: Vec<Vec<(u32, f32)>> = (0..n)
            .map(|i| vec![(i as u32, 1.0), (((i + 1) % n) as u32, 1.0)])
            .collect();
        let ring = SparseRowMatrix::from_rows(n, rows).unwrap();
        let tight = MclConfig {
            density_factor: 1,
            ..MclConfig::new(1.0, 3)
        };
        assert!(matches!(mcl_iterate_with(&ring, &tight), Err(Error::DensityCap { iteration: 1, .. })));
        assert!(mcl_iterate(&ring, 3.0, 1).is_err());
    }

    #[test]
    fn components_of_two_blocks() {
        let w = from_edges(5, &[(0, 1, 1.0), (3, 4, 1.0), (1, 2, 1.0)]);
        assert_eq!(connected_components(&w), vec![0, 0, 0, 1, 1]);
    }
}
