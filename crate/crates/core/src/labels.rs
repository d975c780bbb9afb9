//! Label score storage and dataset bookkeeping.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::matrix::DenseBlock;

/// N×C score matrix stored as column batches of width `batch_size`
/// (the last batch may be narrower).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix {
    n_rows: usize,
    n_classes: usize,
    batch_size: usize,
    blocks: Vec<DenseBlock>,
}

impl LabelMatrix {
    pub fn zeros(n_rows: usize, n_classes: usize, batch_size: usize) -> Result<Self> {
        if n_classes > 0 && (batch_size == 0 || batch_size > n_classes) {
            return Err(Error::Parameter(format!(
                "batch size {batch_size} must lie in 1..={n_classes}"
            )));
        }
        let batch_size = if n_classes == 0 { 0 } else { batch_size };
        let blocks = batch_ranges(n_classes, batch_size)
            .map(|r| DenseBlock::zeros(n_rows, r.len()))
            .collect();
        Ok(Self {
            n_rows,
            n_classes,
            batch_size,
            blocks,
        })
    }

    /// Wraps a full-width score table. Entries must be finite and `>= 0`.
    pub fn from_dense(scores: &DenseBlock, batch_size: usize) -> Result<Self> {
        if let Some(v) = scores.as_slice().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Data(format!("label scores must be finite and non-negative, found {v}")));
        }
        let mut m = Self::zeros(scores.n_rows(), scores.n_cols(), batch_size)?;
        for i in 0..scores.n_rows() {
            for c in 0..scores.n_cols() {
                m.set(i, c, scores.get(i, c));
            }
        }
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn n_batches(&self) -> usize {
        self.blocks.len()
    }

    /// Class columns covered by batch `b`.
    pub fn batch_columns(&self, b: usize) -> Range<usize> {
        let start = b * self.batch_size;
        start..(start + self.batch_size).min(self.n_classes)
    }

    pub fn blocks(&self) -> &[DenseBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DenseBlock] {
        &mut self.blocks
    }

    pub(crate) fn from_blocks(n_rows: usize, n_classes: usize, batch_size: usize, blocks: Vec<DenseBlock>) -> Self {
        Self {
            n_rows,
            n_classes,
            batch_size,
            blocks,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.blocks[c / self.batch_size].get(i, c % self.batch_size)
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, c: usize, v: f64) {
        let b = self.batch_size;
        self.blocks[c / b].set(i, c % b, v);
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n_classes).map(|c| self.get(i, c)).collect()
    }

    /// Full-width copy.
    pub fn to_dense(&self) -> DenseBlock {
        let mut out = DenseBlock::zeros(self.n_rows, self.n_classes);
        for (b, block) in self.blocks.iter().enumerate() {
            let cols = self.batch_columns(b);
            for i in 0..self.n_rows {
                out.row_mut(i)[cols.clone()].copy_from_slice(block.row(i));
            }
        }
        out
    }

    pub fn rebatch(&self, batch_size: usize) -> Result<Self> {
        Self::from_dense(&self.to_dense(), batch_size)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(DenseBlock::is_finite)
    }
}

pub(crate) fn batch_ranges(n: usize, width: usize) -> impl Iterator<Item = Range<usize>> {
    let n_batches = if width == 0 { 0 } else { n.div_ceil(width) };
    (0..n_batches).map(move |b| b * width..((b + 1) * width).min(n))
}

/// Row indices (into a feature file) of labeled seeds, unlabeled background
/// and test points. Graph nodes are numbered seeds first, then background.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DatasetPartition {
    seeds: Vec<(usize, usize)>,
    background: Vec<usize>,
    test: Vec<usize>,
}

impl DatasetPartition {
    /// Checks that the three index sets are pairwise disjoint.
    pub fn new(seeds: Vec<(usize, usize)>, background: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let seed_rows: HashSet<usize> = seeds.iter().map(|&(r, _)| r).collect();
        let bg: HashSet<usize> = background.iter().copied().collect();
        let te: HashSet<usize> = test.iter().copied().collect();
        if let Some(r) = seed_rows.intersection(&bg).next() {
            return Err(Error::Data(format!("row {r} is both seed and background")));
        }
        if let Some(r) = seed_rows.intersection(&te).next() {
            return Err(Error::Data(format!("row {r} is both seed and test")));
        }
        if let Some(r) = bg.intersection(&te).next() {
            return Err(Error::Data(format!("row {r} is both background and test")));
        }
        if bg.len() != background.len() || te.len() != test.len() {
            return Err(Error::Data("duplicate row in background or test set".into()));
        }
        Ok(Self {
            seeds,
            background,
            test,
        })
    }

    pub fn seeds(&self) -> &[(usize, usize)] {
        &self.seeds
    }

    pub fn background(&self) -> &[usize] {
        &self.background
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    pub fn n_seeds(&self) -> usize {
        self.seeds.len()
    }

    pub fn n_background(&self) -> usize {
        self.background.len()
    }

    /// N = n_L + n_B.
    pub fn n_graph(&self) -> usize {
        self.seeds.len() + self.background.len()
    }

    pub fn seed_rows(&self) -> Vec<usize> {
        self.seeds.iter().map(|&(r, _)| r).collect()
    }

    /// Feature-file rows in graph node order.
    pub fn graph_rows(&self) -> Vec<usize> {
        self.seeds
            .iter()
            .map(|&(r, _)| r)
            .chain(self.background.iter().copied())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &(r, c) in &self.seeds {
            writeln!(s, "seed {r} {c}").unwrap();
        }
        for r in &self.background {
            writeln!(s, "background {r}").unwrap();
        }
        for r in &self.test {
            writeln!(s, "test {r}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (mut seeds, mut background, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Format(format!("partition line {}: {line:?}", lineno + 1));
            let mut it = line.split_whitespace();
            let kind = it.next().ok_or_else(bad)?;
            let row: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            match kind {
                "seed" => {
                    let class: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
                    seeds.push((row, class));
                }
                "background" => background.push(row),
                "test" => test.push(row),
                _ => return Err(bad()),
            }
        }
        Self::new(seeds, background, test)
    }
}

/// Probability vector over classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrior {
    probs: Vec<f64>,
}

impl ClassPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Parameter("class prior entries must be finite and >= 0".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("class prior sums to {sum}, expected 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_classes: usize) -> Self {
        Self {
            probs: vec![1.0 / n_classes as f64; n_classes],
        }
    }

    /// Normalizes non-negative weights into a prior.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Parameter("class weights must have a positive sum".into()));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}
