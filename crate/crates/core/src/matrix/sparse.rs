use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use super::dense::DenseBlock;
use super::format::{expect_magic, expect_version};
use crate::error::{Error, Result};

const SPRM_MAGIC: &[u8; 4] = b"SPRM";
const SPRM_VERSION: u32 = 1;

/// Compressed sparse row matrix with non-negative 32-bit weights.
///
/// Column indices are strictly increasing inside each row and every stored
/// value is finite and `>= 0`. Explicit zeros are allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRowMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<f32>,
}

impl SparseRowMatrix {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<u32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let m = Self::from_raw_parts_unchecked(n_rows, n_cols, row_offsets, col_indices, values);
        m.validate()?;
        Ok(m)
    }

    /// Builds the matrix without checking any invariant. Intended for trusted
    /// producers that already guarantee the layout.
    pub fn from_raw_parts_unchecked(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<u32>,
        values: Vec<f32>,
    ) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Builds a matrix from per-row `(column, value)` lists in any order.
    /// Duplicate columns within a row are summed.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(u32, f32)>>) -> Result<Self> {
        let n_rows = rows.len();
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let start = col_indices.len();
            for (c, v) in row {
                if col_indices.len() > start && *col_indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self::new(n_rows, n_cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.len() != self.n_rows + 1 {
            return Err(Error::Format(format!(
                "row_offsets has length {}, expected {}",
                self.row_offsets.len(),
                self.n_rows + 1
            )));
        }
        if self.row_offsets[0] != 0 {
            return Err(Error::Format("row_offsets[0] must be 0".into()));
        }
        let nnz = self.col_indices.len();
        if self.values.len() != nnz || self.row_offsets[self.n_rows] != nnz {
            return Err(Error::Format(format!(
                "nnz mismatch: offsets end at {}, {} columns, {} values",
                self.row_offsets[self.n_rows],
                nnz,
                self.values.len()
            )));
        }
        for i in 0..self.n_rows {
            let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
            if a > b {
                return Err(Error::Format(format!("row_offsets decrease at row {i}")));
            }
            let cols = &self.col_indices[a..b];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!("columns not strictly increasing in row {i}")));
            }
            if cols.last().is_some_and(|&c| c as usize >= self.n_cols) {
                return Err(Error::Format(format!("column index out of bounds in row {i}")));
            }
            if self.values[a..b].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Format(format!("negative or non-finite weight in row {i}")));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Column indices and weights of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f32]) {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().map(|&v| f64::from(v)).sum())
            .collect()
    }

    pub fn transpose(&self) -> SparseRowMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c as usize + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut cols = vec![0u32; self.nnz()];
        let mut vals = vec![0f32; self.nnz()];
        // rows are visited in order, so each output row comes out sorted
        for i in 0..self.n_rows {
            let (rc, rv) = self.row(i);
            for (&c, &v) in rc.iter().zip(rv) {
                let slot = next[c as usize];
                cols[slot] = i as u32;
                vals[slot] = v;
                next[c as usize] += 1;
            }
        }
        SparseRowMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets: offsets,
            col_indices: cols,
            values: vals,
        }
    }

    /// Element-wise sum; coincident entries add.
    pub fn add(&self, other: &SparseRowMatrix) -> Result<SparseRowMatrix> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::shape(
                "SparseRowMatrix::add",
                format!("{}x{}", self.n_rows, self.n_cols),
                format!("{}x{}", other.n_rows, other.n_cols),
            ));
        }
        let mut offsets = Vec::with_capacity(self.n_rows + 1);
        offsets.push(0);
        let mut cols = Vec::with_capacity(self.nnz() + other.nnz());
        let mut vals = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.n_rows {
            let (ac, av) = self.row(i);
            let (bc, bv) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ac.len() || q < bc.len() {
                if q == bc.len() || (p < ac.len() && ac[p] < bc[q]) {
                    cols.push(ac[p]);
                    vals.push(av[p]);
                    p += 1;
                } else if p == ac.len() || bc[q] < ac[p] {
                    cols.push(bc[q]);
                    vals.push(bv[q]);
                    q += 1;
                } else {
                    cols.push(ac[p]);
                    vals.push((f64::from(av[p]) + f64::from(bv[q])) as f32);
                    p += 1;
                    q += 1;
                }
            }
            offsets.push(cols.len());
        }
        Ok(SparseRowMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets: offsets,
            col_indices: cols,
            values: vals,
        })
    }

    /// Dense copy, row-major, for tests and small oracles.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for i in 0..self.n_rows {
            let (c, v) = self.row(i);
            for (&j, &w) in c.iter().zip(v) {
                out[i * self.n_cols + j as usize] = f64::from(w);
            }
        }
        out
    }

    /// True when `(i, j)` is stored iff `(j, i)` is stored.
    pub fn has_symmetric_support(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let t = self.transpose();
        t.row_offsets == self.row_offsets && t.col_indices == self.col_indices
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SPRM_MAGIC)?;
        w.write_u32::<LittleEndian>(SPRM_VERSION)?;
        w.write_u64::<LittleEndian>(self.n_rows as u64)?;
        w.write_u64::<LittleEndian>(self.n_cols as u64)?;
        w.write_u64::<LittleEndian>(self.nnz() as u64)?;
        for &o in &self.row_offsets {
            w.write_u64::<LittleEndian>(o as u64)?;
        }
        for &c in &self.col_indices {
            w.write_u32::<LittleEndian>(c)?;
        }
        for &v in &self.values {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, SPRM_MAGIC)?;
        expect_version(&mut r, SPRM_VERSION)?;
        let n_rows = r.read_u64::<LittleEndian>()? as usize;
        let n_cols = r.read_u64::<LittleEndian>()? as usize;
        let nnz = r.read_u64::<LittleEndian>()? as usize;
        let truncated = |e: std::io::Error| Error::Format(format!("truncated SPRM payload: {e}"));
        let mut offsets64 = vec![0u64; n_rows + 1];
        r.read_u64_into::<LittleEndian>(&mut offsets64).map_err(truncated)?;
        let mut col_indices = vec![0u32; nnz];
        r.read_u32_into::<LittleEndian>(&mut col_indices).map_err(truncated)?;
        let mut values = vec![0f32; nnz];
        r.read_f32_into::<LittleEndian>(&mut values).map_err(truncated)?;
        let row_offsets = offsets64.into_iter().map(|o| o as usize).collect();
        Self::new(n_rows, n_cols, row_offsets, col_indices, values)
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

/// Sparse-dense product `W · X`, accumulated in 64 bits. Rows of the output
/// are computed independently, so the result does not depend on the number
/// of worker threads.
pub fn spmm(w: &SparseRowMatrix, x: &DenseBlock) -> Result<DenseBlock> {
    if w.n_cols() != x.n_rows() {
        return Err(Error::shape(
            "spmm",
            format!("X with {} rows", w.n_cols()),
            format!("X with {} rows", x.n_rows()),
        ));
    }
    let c = x.n_cols();
    let mut out = DenseBlock::zeros(w.n_rows(), c);
    if c == 0 {
        return Ok(out);
    }
    out.as_mut_slice()
        .par_chunks_mut(c)
        .enumerate()
        .for_each(|(i, dst)| {
            let (cols, vals) = w.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let v = f64::from(v);
                for (d, s) in dst.iter_mut().zip(x.row(j as usize)) {
                    *d += v * s;
                }
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> SparseRowMatrix {
        SparseRowMatrix::from_rows(
            3,
            vec![
                vec![(1, 1.0)],
                vec![(0, 1.0 / 3.0), (2, 2.0 / 3.0)],
                vec![(1, 1.0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn spmm_identity() {
        let x = DenseBlock::from_rows(&[[1.0, 2.0], [3.0, -4.0], [0.5, 0.0]]).unwrap();
        assert_eq!(spmm(&SparseRowMatrix::identity(3), &x).unwrap(), x);
    }

    #[test]
    fn spmm_path_graph() {
        let x = DenseBlock::from_rows(&[[1.0], [0.0], [0.0]]).unwrap();
        let y = spmm(&path3(), &x).unwrap();
        assert_eq!(y.get(0, 0), 0.0);
        assert!((y.get(1, 0) - 1.0 / 3.0).abs() < 1e-7);
        assert_eq!(y.get(2, 0), 0.0);
    }

    #[test]
    fn spmm_shape_error() {
        let x = DenseBlock::zeros(2, 1);
        assert!(matches!(spmm(&path3(), &x), Err(Error::Shape { .. })));
    }

    #[test]
    fn from_rows_merges_duplicates() {
        let m = SparseRowMatrix::from_rows(4, vec![vec![(3, 1.0), (1, 2.0), (3, 0.5)]]).unwrap();
        assert_eq!(m.row(0).0, &[1, 3]);
        assert_eq!(m.row(0).1, &[2.0, 1.5]);
    }

    #[test]
    fn validate_catches_bad_layouts() {
        assert!(SparseRowMatrix::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseRowMatrix::new(1, 3, vec![0, 1], vec![3], vec![1.0]).is_err());
        assert!(SparseRowMatrix::new(1, 3, vec![0, 1], vec![0], vec![-1.0]).is_err());
        assert!(SparseRowMatrix::new(1, 3, vec![0, 1], vec![0], vec![f32::NAN]).is_err());
        assert!(SparseRowMatrix::new(1, 3, vec![1, 1], vec![0], vec![1.0]).is_err());
    }

    #[test]
    fn transpose_and_add() {
        let w0 = SparseRowMatrix::from_rows(3, vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(1, 1.0)]]).unwrap();
        let s = w0.add(&w0.transpose()).unwrap();
        assert_eq!(s.to_dense(), vec![0., 1., 0., 1., 0., 2., 0., 2., 0.]);
        assert!(s.has_symmetric_support());
        assert!(!w0.has_symmetric_support());
    }

    #[test]
    fn sprm_header_layout() {
        let mut buf = Vec::new();
        path3().write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SPRM");
        assert_eq!(buf.len(), 4 + 4 + 8 * 3 + 8 * 4 + 4 * 4 + 4 * 4);
        assert_eq!(SparseRowMatrix::read_from(&buf[..]).unwrap(), path3());
    }
}
