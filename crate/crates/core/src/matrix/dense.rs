use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use super::format::{expect_magic, expect_version};
use crate::error::{Error, Result};

const FMAT_MAGIC: &[u8; 4] = b"FMAT";
const FMAT_VERSION: u32 = 1;

/// Dense row-major matrix of descriptors, one row per image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major values. Every value must be finite.
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::shape("FeatureMatrix::new", n * d, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature at row {}, column {}",
                pos / d.max(1),
                pos % d.max(1)
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            data: vec![0.0; n * d],
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::shape("FeatureMatrix::from_rows", d, format!("{} at row {i}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), d, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n: indices.len(),
            d: self.d,
            data,
        }
    }

    /// Concatenates matrices of equal dimensionality along rows.
    pub fn vstack(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
        let d = parts.first().map_or(0, |p| p.d);
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.d != d && p.n > 0 {
                return Err(Error::shape("FeatureMatrix::vstack", d, p.d));
            }
            data.extend_from_slice(&p.data);
            n += p.n;
        }
        Ok(FeatureMatrix { n, d, data })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FMAT_MAGIC)?;
        w.write_u32::<LittleEndian>(FMAT_VERSION)?;
        w.write_u64::<LittleEndian>(self.n as u64)?;
        let d = u32::try_from(self.d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        w.write_u32::<LittleEndian>(d)?;
        for &v in &self.data {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, FMAT_MAGIC)?;
        expect_version(&mut r, FMAT_VERSION)?;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let d = r.read_u32::<LittleEndian>()? as usize;
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Error::Format("FMAT size overflow".into()))?;
        let mut data = vec![0f32; len];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|e| Error::Format(format!("truncated FMAT payload: {e}")))?;
        Self::new(n, d, data)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(f)
    }
}

/// Divides every nonzero row by its Euclidean norm. Zero rows pass through.
pub fn l2_normalize_rows(features: &FeatureMatrix) -> FeatureMatrix {
    let d = features.d;
    let mut data = features.data.clone();
    if d > 0 {
        data.par_chunks_mut(d).for_each(|row| {
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        });
    }
    FeatureMatrix {
        n: features.n,
        d,
        data,
    }
}

/// Dense row-major block of 64-bit scores (a slab of label columns, or a
/// per-test-point score table).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseBlock {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseBlock {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("DenseBlock::new", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return Err(Error::shape("DenseBlock::from_rows", cols, r.as_ref().len()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossy conversion to the 32-bit on-disk container.
    pub fn to_feature_matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.rows, self.cols, self.data.iter().map(|&v| v as f32).collect())
    }

    pub fn from_feature_matrix(f: &FeatureMatrix) -> Self {
        Self {
            rows: f.n_rows(),
            cols: f.dim(),
            data: f.as_slice().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_three_four() {
        let f = FeatureMatrix::from_rows(&[[3.0f32, 4.0], [0.0, 0.0], [1.0, 0.0]]).unwrap();
        let g = l2_normalize_rows(&f);
        assert!((g.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((g.row(0)[1] - 0.8).abs() < 1e-7);
        assert_eq!(g.row(1), &[0.0, 0.0]);
        assert_eq!(g.row(2), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f32::NAN]).is_err());
        assert!(FeatureMatrix::new(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn fmat_round_trip() {
        let f = FeatureMatrix::from_rows(&[[1.5f32, -2.0, 0.25], [0.0, 7.0, 1e-8]]).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FMAT");
        assert_eq!(buf.len(), 4 + 4 + 8 + 4 + 6 * 4);
        let g = FeatureMatrix::read_from(&buf[..]).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn fmat_bad_magic() {
        let mut buf = Vec::new();
        FeatureMatrix::zeros(1, 1).write_to(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(FeatureMatrix::read_from(&buf[..]), Err(Error::Format(_))));
    }
}
