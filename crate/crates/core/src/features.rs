//! PCA reduction of raw descriptors.
//!
//! The model is fit by a full eigendecomposition of the `d × d` covariance of
//! the centered training rows, which is cheap for descriptor sizes up to a few
//! thousand dimensions. No whitening is applied; callers L2-normalize the
//! projected rows afterwards with [`crate::matrix::l2_normalize_rows`].

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::format::{expect_magic, expect_version};
use crate::matrix::FeatureMatrix;

const PCAM_MAGIC: &[u8; 4] = b"PCAM";
const PCAM_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    d_in: usize,
    d_out: usize,
    mean: Vec<f64>,
    /// `d_out × d_in`, row-major, rows orthonormal.
    components: Vec<f64>,
    /// Variance captured by each component, non-increasing.
    explained_variance: Vec<f64>,
}

impl PcaModel {
    /// Builds a model from explicit parameters (used for identity or
    /// externally computed projections).
    pub fn new(mean: Vec<f64>, components: Vec<f64>, d_out: usize) -> Result<Self> {
        let d_in = mean.len();
        if d_out > d_in || components.len() != d_out * d_in {
            return Err(Error::shape("PcaModel::new", format!("{d_out}x{d_in} components"), components.len()));
        }
        Ok(Self {
            d_in,
            d_out,
            mean,
            components,
            explained_variance: Vec::new(),
        })
    }

    pub fn identity(d: usize) -> Self {
        let mut components = vec![0.0; d * d];
        for i in 0..d {
            components[i * d + i] = 1.0;
        }
        Self {
            d_in: d,
            d_out: d,
            mean: vec![0.0; d],
            components,
            explained_variance: Vec::new(),
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.d_in..(k + 1) * self.d_in]
    }

    /// Empty when the model was not produced by [`fit_pca`].
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// `components · (x − mean)`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (0..self.d_out)
            .map(|k| {
                self.component(k)
                    .iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(c, (v, m))| c * (v - m))
                    .sum()
            })
            .collect()
    }

    /// `mean + componentsᵀ · y`, the least-squares preimage of a projection.
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (k, &yk) in y.iter().enumerate().take(self.d_out) {
            for (o, c) in out.iter_mut().zip(self.component(k)) {
                *o += yk * c;
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PCAM_MAGIC)?;
        w.write_u32::<LittleEndian>(PCAM_VERSION)?;
        w.write_u32::<LittleEndian>(self.d_in as u32)?;
        w.write_u32::<LittleEndian>(self.d_out as u32)?;
        for &m in &self.mean {
            w.write_f32::<LittleEndian>(m as f32)?;
        }
        for &c in &self.components {
            w.write_f32::<LittleEndian>(c as f32)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, PCAM_MAGIC)?;
        expect_version(&mut r, PCAM_VERSION)?;
        let d_in = r.read_u32::<LittleEndian>()? as usize;
        let d_out = r.read_u32::<LittleEndian>()? as usize;
        let mut mean = vec![0f32; d_in];
        r.read_f32_into::<LittleEndian>(&mut mean)
            .map_err(|e| Error::Format(format!("truncated PCAM mean: {e}")))?;
        let mut comps = vec![0f32; d_in * d_out];
        r.read_f32_into::<LittleEndian>(&mut comps)
            .map_err(|e| Error::Format(format!("truncated PCAM components: {e}")))?;
        Self::new(
            mean.into_iter().map(f64::from).collect(),
            comps.into_iter().map(f64::from).collect(),
            d_out,
        )
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Fits the top-`d_out` principal directions of `features`.
pub fn fit_pca(features: &FeatureMatrix, d_out: usize) -> Result<PcaModel> {
    let (n, d) = (features.n_rows(), features.dim());
    if d_out > d {
        return Err(Error::Parameter(format!("d_out {d_out} exceeds input dimension {d}")));
    }
    if n < d_out.max(1) {
        return Err(Error::Data(format!("PCA needs at least {} rows, got {n}", d_out.max(1))));
    }

    let mut mean = vec![0.0f64; d];
    for row in features.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    // Upper triangle of the scatter matrix, one partial sum per chunk of rows.
    // Chunk boundaries are fixed so the summation order is thread-independent.
    let chunk = 256;
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0f64; d * d];
            let mut centered = vec![0.0f64; d];
            for i in b * chunk..((b + 1) * chunk).min(n) {
                for ((c, &v), m) in centered.iter_mut().zip(features.row(i)).zip(&mean) {
                    *c = f64::from(v) - m;
                }
                for a in 0..d {
                    let ca = centered[a];
                    for bb in a..d {
                        acc[a * d + bb] += ca * centered[bb];
                    }
                }
            }
            acc
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in &partials {
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += p[a * d + b];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(d_out * d);
    let mut explained = Vec::with_capacity(d_out);
    for &k in order.iter().take(d_out) {
        let v = eig.eigenvectors.column(k);
        // sign convention: largest-magnitude coordinate is positive
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        components.extend(v.iter().map(|x| sign * x));
        explained.push(eig.eigenvalues[k].max(0.0));
    }

    Ok(PcaModel {
        d_in: d,
        d_out,
        mean,
        components,
        explained_variance: explained,
    })
}

/// Projects every row through the model. Output rows are not normalized.
pub fn apply_pca(model: &PcaModel, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if features.dim() != model.d_in {
        return Err(Error::shape("apply_pca", model.d_in, features.dim()));
    }
    let rows: Vec<f32> = (0..features.n_rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let x: Vec<f64> = features.row(i).iter().map(|&v| f64::from(v)).collect();
            model.project(&x).into_iter().map(|v| v as f32)
        })
        .collect();
    FeatureMatrix::new(features.n_rows(), model.d_out, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Points `origin + a·u + b·v` on a 2-D plane inside 5-D.
    fn planar(n: usize, seed: u64) -> (FeatureMatrix, Vec<[f64; 5]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let origin = [0.1, -0.2, 0.3, 0.05, -0.1];
        let u = [0.6, 0.0, 0.8, 0.0, 0.0];
        let v = [0.0, 0.6, 0.0, 0.0, 0.8];
        let mut pts = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-0.5..0.5);
            let b: f64 = rng.random_range(-0.25..0.25);
            let mut p = [0.0; 5];
            for k in 0..5 {
                p[k] = ((origin[k] + a * u[k] + b * v[k]) as f32) as f64;
            }
            pts.push(p);
        }
        let rows: Vec<Vec<f32>> = pts.iter().map(|p| p.iter().map(|&x| x as f32).collect()).collect();
        (FeatureMatrix::from_rows(&rows).unwrap(), pts)
    }

    #[test]
    fn planar_data_reconstructs() {
        let (f, pts) = planar(200, 1);
        let model = fit_pca(&f, 2).unwrap();
        let ev = model.explained_variance();
        let total: f64 = ev.iter().sum();
        assert!(ev[0] >= ev[1]);
        // centered data: residual variance outside the plane is nil
        let mut resid = 0.0;
        for p in &pts {
            let y = model.project(p);
            let back = model.reconstruct(&y);
            for k in 0..5 {
                assert!((back[k] - p[k]).abs() < 1e-6, "{} vs {}", back[k], p[k]);
                resid += (back[k] - p[k]).powi(2);
            }
        }
        assert!(resid / pts.len() as f64 <= 1e-6 * total);
    }

    #[test]
    fn axis_aligned_first_component() {
        let rows: Vec<[f32; 3]> = (0..20).map(|i| [i as f32 - 7.0, 0.0, 0.0]).collect();
        let model = fit_pca(&FeatureMatrix::from_rows(&rows).unwrap(), 1).unwrap();
        let c = model.component(0);
        assert!((c[0].abs() - 1.0).abs() < 1e-9);
        assert!(c[1].abs() < 1e-9 && c[2].abs() < 1e-9);
    }

    #[test]
    fn components_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f32>> = (0..100).map(|_| (0..6).map(|_| rng.random::<f32>()).collect()).collect();
        let model = fit_pca(&FeatureMatrix::from_rows(&rows).unwrap(), 4).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = model.component(a).iter().zip(model.component(b)).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn full_rank_is_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f32>> = (0..40).map(|_| (0..4).map(|_| rng.random::<f32>()).collect()).collect();
        let f = FeatureMatrix::from_rows(&rows).unwrap();
        let model = fit_pca(&f, 4).unwrap();
        let g = apply_pca(&model, &f).unwrap();
        let dist = |m: &FeatureMatrix, i: usize, j: usize| -> f64 {
            m.row(i).iter().zip(m.row(j)).map(|(a, b)| f64::from(a - b).powi(2)).sum::<f64>().sqrt()
        };
        for i in 0..10 {
            for j in 0..10 {
                assert!((dist(&f, i, j) - dist(&g, i, j)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn mean_row_maps_to_zero_and_identity_is_noop() {
        let (f, _) = planar(50, 2);
        let model = fit_pca(&f, 2).unwrap();
        let y = model.project(model.mean());
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        let id = PcaModel::identity(5);
        assert_eq!(apply_pca(&id, &f).unwrap(), f);
    }

    #[test]
    fn errors() {
        let f = FeatureMatrix::zeros(3, 2);
        assert!(matches!(fit_pca(&f, 3), Err(Error::Parameter(_))));
        assert!(matches!(fit_pca(&FeatureMatrix::zeros(1, 4), 2), Err(Error::Data(_))));
        assert!(matches!(apply_pca(&PcaModel::identity(3), &f), Err(Error::Shape { .. })));
    }

    #[test]
    fn pcam_round_trip_layout() {
        let (f, _) = planar(30, 4);
        let model = fit_pca(&f, 2).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PCAM");
        assert_eq!(buf.len(), 4 + 4 + 4 + 4 + 5 * 4 + 10 * 4);
        let back = PcaModel::read_from(&buf[..]).unwrap();
        for (a, b) in back.components.iter().zip(&model.components) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
