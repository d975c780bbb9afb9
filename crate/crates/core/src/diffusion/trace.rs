use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knn::SENTINEL;
use crate::labels::LabelMatrix;
use crate::matrix::format::{expect_magic, expect_version};
use crate::matrix::SparseRowMatrix;

const TRACE_MAGIC: &[u8; 4] = b"TRCE";
const TRACE_VERSION: u32 = 1;

/// Strongest predecessor of every `(node, class)` at every iteration, for a
/// chosen subset of classes.
///
/// `steps[t][s·N + i]` is the node `j` maximizing `W[i,j]·L_t[j,c]` where `c`
/// is the `s`-th traced class, or [`SENTINEL`] when `L_{t+1}[i,c] = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    n_nodes: usize,
    classes: Vec<usize>,
    /// `L_0[i,c] > 0`, laid out like one step.
    sources: Vec<bool>,
    steps: Vec<Vec<u32>>,
}

/// Result of walking a trace backwards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Backtrack {
    /// `(iteration, node)` pairs from the queried node back to iteration 0.
    Path(Vec<(usize, usize)>),
    /// The node carries no evidence for the class at that iteration.
    NotReached,
}

impl Trace {
    pub(crate) fn new(n_nodes: usize, classes: Vec<usize>, l0: &LabelMatrix) -> Self {
        let mut sources = vec![false; classes.len() * n_nodes];
        for (s, &c) in classes.iter().enumerate() {
            for i in 0..n_nodes {
                sources[s * n_nodes + i] = l0.get(i, c) > 0.0;
            }
        }
        Self {
            n_nodes,
            classes,
            sources,
            steps: Vec::new(),
        }
    }

    /// Records the contributors of `next = W·prev` (before any rescaling).
    /// Rows listed in `reset` with a positive value in `next` point to
    /// themselves.
    pub(crate) fn record(&mut self, w: &SparseRowMatrix, prev: &LabelMatrix, next: &LabelMatrix, reset: &[usize]) {
        let n = self.n_nodes;
        let mut step = vec![SENTINEL; self.classes.len() * n];
        for (s, &c) in self.classes.iter().enumerate() {
            let prev_col: Vec<f64> = (0..n).map(|j| prev.get(j, c)).collect();
            step[s * n..(s + 1) * n]
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, slot)| {
                    if next.get(i, c) <= 0.0 {
                        return;
                    }
                    let (cols, vals) = w.row(i);
                    let mut best = (0.0f64, SENTINEL);
                    for (&j, &v) in cols.iter().zip(vals) {
                        let contrib = f64::from(v) * prev_col[j as usize];
                        if contrib > best.0 {
                            best = (contrib, j);
                        }
                    }
                    *slot = best.1;
                });
            for &i in reset {
                if next.get(i, c) > 0.0 {
                    step[s * n + i] = i as u32;
                }
            }
        }
        self.steps.push(step);
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Drops iterations after `t`.
    pub fn truncate(&mut self, t: usize) {
        self.steps.truncate(t);
    }

    /// Backtracks from the last recorded iteration.
    pub fn backtrack(&self, node: usize, class: usize) -> Result<Backtrack> {
        self.backtrack_at(self.n_iterations(), node, class)
    }

    /// Backtracks from `(iteration, node)` for `class`. The path ends at a
    /// node that carried the class at iteration 0.
    pub fn backtrack_at(&self, iteration: usize, node: usize, class: usize) -> Result<Backtrack> {
        let s = self
            .classes
            .iter()
            .position(|&c| c == class)
            .ok_or_else(|| Error::Parameter(format!("class {class} was not traced")))?;
        if node >= self.n_nodes {
            return Err(Error::Parameter(format!("node {node} out of range for {} nodes", self.n_nodes)));
        }
        if iteration > self.n_iterations() {
            return Err(Error::Parameter(format!(
                "iteration {iteration} beyond the {} recorded",
                self.n_iterations()
            )));
        }
        let n = self.n_nodes;
        let mut path = vec![(iteration, node)];
        let mut cur = node;
        for t in (0..iteration).rev() {
            let prev = self.steps[t][s * n + cur];
            if prev == SENTINEL {
                return Ok(Backtrack::NotReached);
            }
            cur = prev as usize;
            path.push((t, cur));
        }
        if !self.sources[s * n + cur] {
            return Ok(Backtrack::NotReached);
        }
        Ok(Backtrack::Path(path))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRACE_MAGIC)?;
        w.write_u32::<LittleEndian>(TRACE_VERSION)?;
        w.write_u64::<LittleEndian>(self.n_nodes as u64)?;
        w.write_u32::<LittleEndian>(self.classes.len() as u32)?;
        w.write_u32::<LittleEndian>(self.steps.len() as u32)?;
        for &c in &self.classes {
            w.write_u32::<LittleEndian>(c as u32)?;
        }
        for &b in &self.sources {
            w.write_u8(u8::from(b))?;
        }
        for step in &self.steps {
            for &id in step {
                w.write_u32::<LittleEndian>(id)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_magic(&mut r, TRACE_MAGIC)?;
        expect_version(&mut r, TRACE_VERSION)?;
        let trunc = |e: std::io::Error| Error::Format(format!("truncated trace: {e}"));
        let n_nodes = r.read_u64::<LittleEndian>().map_err(trunc)? as usize;
        let n_classes = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let n_steps = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let width = n_classes
            .checked_mul(n_nodes)
            .ok_or_else(|| Error::Format("trace size overflow".into()))?;
        let mut classes = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            classes.push(r.read_u32::<LittleEndian>().map_err(trunc)? as usize);
        }
        let mut sources = Vec::with_capacity(width);
        for _ in 0..width {
            sources.push(r.read_u8().map_err(trunc)? != 0);
        }
        let mut steps = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let mut step = vec![0u32; width];
            r.read_u32_into::<LittleEndian>(&mut step).map_err(trunc)?;
            if step.iter().any(|&id| id != SENTINEL && id as usize >= n_nodes) {
                return Err(Error::Format("trace contributor out of range".into()));
            }
            steps.push(step);
        }
        Ok(Self {
            n_nodes,
            classes,
            sources,
            steps,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
