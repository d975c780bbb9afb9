//! Label propagation over the graph operator.
//!
//! Each iteration computes `L ← Γ_r(η(W·L))`, optionally resets seed rows to
//! their one-hot labels, and records fill-rate statistics and the strongest
//! predecessor of each traced `(node, class)` entry.

mod eta;
mod mcl;
mod trace;

use std::collections::HashMap;
use std::fmt::Write as _;

pub use eta::{
    apply_eta, gamma_transform, marginal_residuals, normalize_columns, normalize_rows, sinkhorn,
    sinkhorn_to_tolerance, validate_gamma, EtaOperator, MarginalResiduals,
};
pub use mcl::{connected_components, mcl_iterate, mcl_iterate_with, MclConfig};
pub use trace::{Backtrack, Trace};

use crate::classify::topk_accuracy;
use crate::error::{Error, Result};
use crate::graph::GraphBundle;
use crate::knn::NeighborList;
use crate::labels::{DatasetPartition, LabelMatrix};
use crate::matrix::{spmm, DenseBlock, SparseRowMatrix};

/// One-hot rows for the seeds (graph rows `0..n_L`, in partition order) and
/// zero rows for the background.
pub fn init_labels(part: &DatasetPartition, n_classes: usize, batch_size: usize) -> Result<LabelMatrix> {
    let mut seen: HashMap<usize, usize> = HashMap::new();
    for &(row, class) in part.seeds() {
        if class >= n_classes {
            return Err(Error::Data(format!("seed class {class} out of range for {n_classes} classes")));
        }
        if let Some(&prev) = seen.get(&row) {
            if prev != class {
                return Err(Error::Data(format!("row {row} seeded with classes {prev} and {class}")));
            }
        }
        seen.insert(row, class);
    }
    let mut l = LabelMatrix::zeros(part.n_graph(), n_classes, batch_size)?;
    for (i, &(_, class)) in part.seeds().iter().enumerate() {
        l.set(i, class, 1.0);
    }
    Ok(l)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionConfig {
    /// Iterations to run; the upper bound of the search when validation
    /// rows are supplied.
    pub n_iters: usize,
    pub reset_seeds: bool,
    pub gamma_r: Option<f64>,
    pub eta: EtaOperator,
    /// Column batch width; `None` processes all classes at once.
    pub batch_size: Option<usize>,
    /// Classes whose contributors are recorded for backtracking.
    pub trace_classes: Vec<usize>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            n_iters: 10,
            reset_seeds: false,
            gamma_r: None,
            eta: EtaOperator::ColNorm,
            batch_size: None,
            trace_classes: Vec::new(),
        }
    }
}

impl DiffusionConfig {
    pub fn with_iters(mut self, n_iters: usize) -> Self {
        self.n_iters = n_iters;
        self
    }

    pub fn with_eta(mut self, eta: EtaOperator) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_gamma(mut self, r: f64) -> Self {
        self.gamma_r = Some(r);
        self
    }

    pub fn with_reset(mut self, reset: bool) -> Self {
        self.reset_seeds = reset;
        self
    }

    pub fn with_batch_size(mut self, batch: usize) -> Self {
        self.batch_size = Some(batch);
        self
    }

    pub fn with_trace(mut self, classes: Vec<usize>) -> Self {
        self.trace_classes = classes;
        self
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if let Some(r) = self.gamma_r {
            validate_gamma(r)?;
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > n_classes {
                return Err(Error::Parameter(format!("batch size {b} must lie in 1..={n_classes}")));
            }
            if b < n_classes && self.eta.needs_full_rows() {
                return Err(Error::Parameter(format!(
                    "η = {} couples all classes of a row; batch size must equal {n_classes}",
                    self.eta
                )));
            }
        }
        if let EtaOperator::Sinkhorn { iters: 0, .. } = self.eta {
            return Err(Error::Parameter("sinkhorn needs at least one pass".into()));
        }
        if let Some(&c) = self.trace_classes.iter().find(|&&c| c >= n_classes) {
            return Err(Error::Parameter(format!("trace class {c} out of range")));
        }
        Ok(())
    }
}

/// Held-out points used to pick the stopping iteration: their normalized
/// incoming edges and true classes.
#[derive(Clone, Debug)]
pub struct Validation {
    pub edges: NeighborList,
    pub labels: Vec<usize>,
    pub top_k: usize,
}

impl Validation {
    pub fn new(edges: NeighborList, labels: Vec<usize>) -> Self {
        Self { edges, labels, top_k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FillRecord {
    pub iteration: usize,
    pub fill_rate: f64,
    pub accuracy: Option<f64>,
}

/// Per-iteration fill rate and validation accuracy, starting at iteration 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FillStats {
    pub records: Vec<FillRecord>,
}

impl FillStats {
    pub fn fill_rates(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.fill_rate).collect()
    }

    /// Tab-separated `iteration fill_rate accuracy` lines, `-` for a missing
    /// accuracy.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# iteration\tfill_rate\taccuracy\n");
        for r in &self.records {
            let acc = r.accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
            let _ = writeln!(s, "{}\t{:.6}\t{acc}", r.iteration, r.fill_rate);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("bad fill-stats line {line:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            records.push(FillRecord {
                iteration: f[0].parse().map_err(|_| bad())?,
                fill_rate: f[1].parse().map_err(|_| bad())?,
                accuracy: if f[2] == "-" { None } else { Some(f[2].parse().map_err(|_| bad())?) },
            });
        }
        Ok(Self { records })
    }
}

#[derive(Clone, Debug)]
pub struct DiffusionRun {
    /// Labels at `best_iteration`.
    pub labels: LabelMatrix,
    /// Iteration whose labels are returned: the last one, or the one with
    /// the best validation accuracy (earliest on ties).
    pub best_iteration: usize,
    pub stats: FillStats,
    /// Contributors up to `best_iteration`.
    pub trace: Trace,
}

/// Diffuses `l0` over the bundle's operator; seeds are graph rows `0..n_L`.
pub fn diffuse(
    graph: &GraphBundle,
    l0: &LabelMatrix,
    cfg: &DiffusionConfig,
    validation: Option<&Validation>,
) -> Result<DiffusionRun> {
    let seeds: Vec<usize> = (0..graph.meta.n_seeds).collect();
    diffuse_operator(&graph.w, &seeds, l0, cfg, validation)
}

/// Diffusion over an arbitrary square operator with the given seed rows.
pub fn diffuse_operator(
    w: &SparseRowMatrix,
    seed_rows: &[usize],
    l0: &LabelMatrix,
    cfg: &DiffusionConfig,
    validation: Option<&Validation>,
) -> Result<DiffusionRun> {
    let n = w.n_rows();
    if w.n_cols() != n || l0.n_rows() != n {
        return Err(Error::shape(
            "diffuse",
            format!("{n}x{n} operator and {n} label rows"),
            format!("{}x{} operator, {} label rows", w.n_rows(), w.n_cols(), l0.n_rows()),
        ));
    }
    let c = l0.n_classes();
    cfg.validate(c)?;
    if let Some(&s) = seed_rows.iter().find(|&&s| s >= n) {
        return Err(Error::Parameter(format!("seed row {s} out of range")));
    }
    if let Some(v) = validation {
        if v.edges.query_count() != v.labels.len() {
            return Err(Error::shape("diffuse validation", v.edges.query_count(), v.labels.len()));
        }
    }
    let batch = cfg.batch_size.unwrap_or(c.max(1));
    let reset: &[usize] = if cfg.reset_seeds { seed_rows } else { &[] };
    let seed_values: Vec<Vec<f64>> = reset.iter().map(|&i| l0.row(i)).collect();

    let mut l = l0.rebatch(batch)?;
    let mut trace = Trace::new(n, cfg.trace_classes.clone(), l0);
    let mut stats = FillStats {
        records: vec![FillRecord {
            iteration: 0,
            fill_rate: fill_rate(&l),
            accuracy: None,
        }],
    };
    let mut best: Option<(f64, usize, LabelMatrix)> = None;

    for t in 1..=cfg.n_iters {
        let blocks = l
            .blocks()
            .iter()
            .map(|b| spmm(w, b))
            .collect::<Result<Vec<DenseBlock>>>()?;
        let mut next = LabelMatrix::from_blocks(n, c, l.batch_size(), blocks);
        if !next.is_finite() {
            return Err(Error::NonFinite { iteration: t });
        }
        eta::apply_eta_in_place(&mut next, &cfg.eta)?;
        if let Some(r) = cfg.gamma_r {
            eta::gamma_in_place(&mut next, r)?;
        }
        for (&i, vals) in reset.iter().zip(&seed_values) {
            for (col, &v) in vals.iter().enumerate() {
                next.set(i, col, v);
            }
        }
        if !next.is_finite() {
            return Err(Error::NonFinite { iteration: t });
        }
        if !cfg.trace_classes.is_empty() {
            trace.record(w, &l, &next, reset);
        }
        l = next;

        let accuracy = match validation {
            Some(v) => {
                let scores = extend_with_edges(&v.edges, &l)?;
                Some(topk_accuracy(&scores.scores, &v.labels, v.top_k)?)
            }
            None => None,
        };
        stats.records.push(FillRecord {
            iteration: t,
            fill_rate: fill_rate(&l),
            accuracy,
        });
        if let Some(acc) = accuracy {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, t, l.clone()));
            }
        }
    }

    let (labels, best_iteration) = match best {
        Some((_, t, lb)) => (lb, t),
        None => (l, cfg.n_iters),
    };
    if !cfg.trace_classes.is_empty() {
        trace.truncate(best_iteration);
    }
    Ok(DiffusionRun {
        labels,
        best_iteration,
        stats,
        trace,
    })
}

/// Fraction of strictly positive entries.
pub fn fill_rate(l: &LabelMatrix) -> f64 {
    let total = l.n_rows() * l.n_classes();
    if total == 0 {
        return 0.0;
    }
    let nz: usize = l
        .blocks()
        .iter()
        .map(|b| b.as_slice().iter().filter(|&&v| v > 0.0).count())
        .sum();
    nz as f64 / total as f64
}

/// Class scores of out-of-sample points.
#[derive(Clone, Debug, PartialEq)]
pub struct TestScores {
    pub scores: DenseBlock,
    /// Rows whose score vector is all zero (no labeled evidence reached them).
    pub unreached: Vec<bool>,
}

impl TestScores {
    pub fn n_unreached(&self) -> usize {
        self.unreached.iter().filter(|&&u| u).count()
    }
}

/// Scores the bundle's test points from the final labels.
pub fn extend_to_test(graph: &GraphBundle, l: &LabelMatrix) -> Result<TestScores> {
    extend_with_edges(&graph.test_edges, l)
}

/// Each query row is the edge-weighted sum of its neighbors' label rows.
pub fn extend_with_edges(edges: &NeighborList, l: &LabelMatrix) -> Result<TestScores> {
    let c = l.n_classes();
    let dense = l.to_dense();
    let mut scores = DenseBlock::zeros(edges.query_count(), c);
    for q in 0..edges.query_count() {
        let out = scores.row_mut(q);
        for (wgt, id) in edges.valid(q) {
            let id = id as usize;
            if id >= l.n_rows() {
                return Err(Error::Data(format!("edge to node {id} but only {} graph nodes", l.n_rows())));
            }
            for (o, &v) in out.iter_mut().zip(dense.row(id)) {
                *o += f64::from(wgt) * v;
            }
        }
    }
    let unreached = (0..scores.n_rows()).map(|q| scores.row(q).iter().all(|&v| v == 0.0)).collect();
    Ok(TestScores { scores, unreached })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> SparseRowMatrix {
        SparseRowMatrix::from_rows(3, vec![vec![(1, 1.0)], vec![(0, 1.0 / 3.0), (2, 2.0 / 3.0)], vec![(1, 1.0)]])
            .unwrap()
    }

    fn seed_at(n: usize, c: usize, rows: &[(usize, usize)]) -> LabelMatrix {
        let mut l = LabelMatrix::zeros(n, c, c).unwrap();
        for &(i, k) in rows {
            l.set(i, k, 1.0);
        }
        l
    }

    #[test]
    fn init_labels_examples() {
        let part = DatasetPartition::new(vec![(7, 2)], vec![1, 3], vec![]).unwrap();
        let l = init_labels(&part, 4, 4).unwrap();
        assert_eq!(l.row(0), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(l.row(1).iter().chain(&l.row(2)).all(|&v| v == 0.0));
        let empty = DatasetPartition::new(vec![], vec![0, 1], vec![]).unwrap();
        assert_eq!(fill_rate(&init_labels(&empty, 3, 3).unwrap()), 0.0);
        let conflict = DatasetPartition::new(vec![(0, 1), (0, 2)], vec![], vec![]).unwrap();
        assert!(init_labels(&conflict, 3, 3).is_err());
        let two_per_class = DatasetPartition::new(vec![(0, 0), (1, 1), (2, 0), (3, 1)], vec![4], vec![]).unwrap();
        assert_eq!(init_labels(&two_per_class, 2, 1).unwrap().to_dense().column_sums(), vec![2.0, 2.0]);
    }

    #[test]
    fn one_step_on_path_graph() {
        let cfg = DiffusionConfig::default().with_eta(EtaOperator::None).with_iters(1);
        let run = diffuse_operator(&path3(), &[0], &seed_at(3, 1, &[(0, 0)]), &cfg, None).unwrap();
        let col = run.labels.to_dense().column(0);
        assert_eq!(col[0], 0.0);
        assert!((col[1] - 1.0 / 3.0).abs() < 1e-7);
        assert_eq!(col[2], 0.0);
    }

    #[test]
    fn reset_keeps_seed_rows() {
        let cfg = DiffusionConfig::default().with_reset(true).with_iters(4);
        let l0 = seed_at(3, 2, &[(0, 0), (2, 1)]);
        let w = crate::graph::symmetrize_and_normalize(&SparseRowMatrix::from_rows(3, vec![vec![(0, 1.0), (1, 1.0)], vec![(1, 1.0), (2, 1.0)], vec![(2, 1.0)]]).unwrap()).unwrap();
        let run = diffuse_operator(&w, &[0, 2], &l0, &cfg, None).unwrap();
        assert_eq!(run.labels.row(0), vec![1.0, 0.0]);
        assert_eq!(run.labels.row(2), vec![0.0, 1.0]);
    }

    #[test]
    fn backtrack_on_path_graph() {
        let cfg = DiffusionConfig::default().with_eta(EtaOperator::None).with_iters(2).with_trace(vec![0]);
        let run = diffuse_operator(&path3(), &[0], &seed_at(3, 1, &[(0, 0)]), &cfg, None).unwrap();
        assert_eq!(run.trace.backtrack(2, 0).unwrap(), Backtrack::Path(vec![(2, 2), (1, 1), (0, 0)]));
        assert_eq!(run.trace.backtrack(1, 0).unwrap(), Backtrack::NotReached);
        assert_eq!(run.trace.backtrack_at(0, 0, 0).unwrap(), Backtrack::Path(vec![(0, 0)]));
        assert!(run.trace.backtrack(0, 3).is_err());
    }

    #[test]
    fn heavy_self_loop_repeats_node() {
        let w = SparseRowMatrix::from_rows(
            3,
            vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.1), (1, 0.8), (2, 0.1)], vec![(1, 0.5), (2, 0.5)]],
        )
        .unwrap();
        let cfg = DiffusionConfig::default().with_iters(3).with_trace(vec![0]);
        let run = diffuse_operator(&w, &[0], &seed_at(3, 1, &[(0, 0)]), &cfg, None).unwrap();
        let Backtrack::Path(p) = run.trace.backtrack(1, 0).unwrap() else { panic!("not reached") };
        assert_eq!(p.last(), Some(&(0, 0)));
        assert!(p.windows(2).any(|w| w[0].1 == w[1].1 && w[0].1 == 1));
    }

    #[test]
    fn trace_round_trip() {
        let cfg = DiffusionConfig::default().with_iters(2).with_trace(vec![0]);
        let run = diffuse_operator(&path3(), &[0], &seed_at(3, 1, &[(0, 0)]), &cfg, None).unwrap();
        let mut buf = Vec::new();
        run.trace.write_to(&mut buf).unwrap();
        assert_eq!(Trace::read_from(&buf[..]).unwrap(), run.trace);
    }

    #[test]
    fn batching_rules() {
        let l0 = seed_at(3, 2, &[(0, 0)]);
        let cfg = DiffusionConfig::default().with_eta(EtaOperator::RowNorm).with_batch_size(1);
        assert!(matches!(diffuse_operator(&path3(), &[0], &l0, &cfg, None), Err(Error::Parameter(_))));
        let full = diffuse_operator(&path3(), &[0], &l0, &DiffusionConfig::default().with_iters(3), None).unwrap();
        let cfg = DiffusionConfig::default().with_iters(3).with_batch_size(1);
        let batched = diffuse_operator(&path3(), &[0], &l0, &cfg, None).unwrap();
        assert_eq!(full.labels.to_dense(), batched.labels.to_dense());
    }

    #[test]
    fn non_finite_aborts_with_iteration() {
        let w = SparseRowMatrix::from_raw_parts_unchecked(2, 2, vec![0, 1, 2], vec![1, 0], vec![1.0, f32::NAN]);
        let err = diffuse_operator(&w, &[0], &seed_at(2, 1, &[(0, 0)]), &DiffusionConfig::default(), None)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { iteration: 1 }));
    }

    #[test]
    fn dimension_mismatch() {
        let err = diffuse_operator(&path3(), &[0], &seed_at(4, 1, &[]), &DiffusionConfig::default(), None);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn fill_rate_examples() {
        assert_eq!(fill_rate(&seed_at(10, 5, &[(3, 1)])), 0.02);
        let mut dense = LabelMatrix::zeros(2, 2, 2).unwrap();
        for i in 0..2 {
            for c in 0..2 {
                dense.set(i, c, 0.5);
            }
        }
        assert_eq!(fill_rate(&dense), 1.0);
    }

    #[test]
    fn extension_examples() {
        let l = seed_at(3, 2, &[(0, 0), (1, 1)]);
        let edges = NeighborList::from_rows(2, &[vec![(1.0, 0)], vec![(0.5, 0), (0.5, 1)], vec![(1.0, 2)]]);
        let s = extend_with_edges(&edges, &l).unwrap();
        assert_eq!(s.scores.row(0), &[1.0, 0.0]);
        assert_eq!(s.scores.row(1), &[0.5, 0.5]);
        assert_eq!(s.scores.row(2), &[0.0, 0.0]);
        assert_eq!(s.unreached, vec![false, false, true]);
    }

    #[test]
    fn early_stopping_picks_best_iteration() {
        // 4-node path, seed class 0 at node 0, class 1 at node 3; the
        // validation point hangs off node 1 and is class 0.
        let w0 = SparseRowMatrix::from_rows(
            4,
            vec![vec![(0, 1.0), (1, 1.0)], vec![(1, 1.0), (2, 1.0)], vec![(2, 1.0), (3, 1.0)], vec![(3, 1.0)]],
        )
        .unwrap();
        let w = crate::graph::symmetrize_and_normalize(&w0).unwrap();
        let val = Validation {
            edges: NeighborList::from_rows(1, &[vec![(1.0, 1)]]),
            labels: vec![0],
            top_k: 1,
        };
        let run = diffuse_operator(&w, &[0, 3], &seed_at(4, 2, &[(0, 0), (3, 1)]), &DiffusionConfig::default().with_iters(6), Some(&val))
            .unwrap();
        assert_eq!(run.best_iteration, 1);
        assert_eq!(run.stats.records.len(), 7);
        assert!(run.stats.records[1..].iter().all(|r| r.accuracy.is_some()));
        let text = run.stats.to_text();
        assert_eq!(FillStats::from_text(&text).unwrap().records.len(), 7);
    }
}
