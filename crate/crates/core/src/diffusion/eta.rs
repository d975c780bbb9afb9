use std::fmt;

use crate::error::{Error, Result};
use crate::labels::{ClassPrior, LabelMatrix};
use crate::matrix::DenseBlock;

/// Renormalization applied to the label matrix after each propagation step.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum EtaOperator {
    None,
    /// L1-normalize each row (one label per point).
    RowNorm,
    /// L1-normalize each column (uniform label distribution).
    #[default]
    ColNorm,
    /// Column normalization followed by scaling column `c` by `p[c]`.
    ClassPrior(ClassPrior),
    /// Alternating projection onto unit row sums and prior-proportional
    /// column sums, stopped after a fixed number of passes.
    Sinkhorn { prior: ClassPrior, iters: usize },
}

impl EtaOperator {
    pub fn sinkhorn(prior: ClassPrior) -> Self {
        EtaOperator::Sinkhorn { prior, iters: 5 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EtaOperator::None => "none",
            EtaOperator::RowNorm => "rownorm",
            EtaOperator::ColNorm => "colnorm",
            EtaOperator::ClassPrior(_) => "class_prior",
            EtaOperator::Sinkhorn { .. } => "sinkhorn",
        }
    }

    /// Row-coupled operators need every column of a row at once.
    pub fn needs_full_rows(&self) -> bool {
        matches!(self, EtaOperator::RowNorm | EtaOperator::Sinkhorn { .. })
    }

    fn prior(&self) -> Option<&ClassPrior> {
        match self {
            EtaOperator::ClassPrior(p) | EtaOperator::Sinkhorn { prior: p, .. } => Some(p),
            _ => None,
        }
    }
}

impl fmt::Display for EtaOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Marginal errors of a Sinkhorn projection: `max |row_sum − 1|` over
/// nonzero rows and `max |col_sum / total − p[c]|` over nonzero columns
/// (with the prior renormalized over those columns).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalResiduals {
    pub row: f64,
    pub col: f64,
}

impl MarginalResiduals {
    pub fn max(&self) -> f64 {
        self.row.max(self.col)
    }
}

/// Applies `op` and returns the result together with the Sinkhorn residuals
/// (only for [`EtaOperator::Sinkhorn`]).
pub fn apply_eta(l: &LabelMatrix, op: &EtaOperator) -> Result<(LabelMatrix, Option<MarginalResiduals>)> {
    let mut out = l.clone();
    let res = apply_eta_in_place(&mut out, op)?;
    Ok((out, res))
}

pub(crate) fn apply_eta_in_place(l: &mut LabelMatrix, op: &EtaOperator) -> Result<Option<MarginalResiduals>> {
    check_non_negative(l)?;
    if let Some(p) = op.prior() {
        if p.len() != l.n_classes() {
            return Err(Error::shape("apply_eta", format!("prior over {} classes", l.n_classes()), p.len()));
        }
    }
    match op {
        EtaOperator::None => Ok(None),
        EtaOperator::ColNorm => {
            for block in l.blocks_mut() {
                normalize_columns(block);
            }
            Ok(None)
        }
        EtaOperator::ClassPrior(p) => {
            let ranges: Vec<_> = (0..l.n_batches()).map(|b| l.batch_columns(b)).collect();
            for (block, cols) in l.blocks_mut().iter_mut().zip(ranges) {
                normalize_columns(block);
                scale_columns(block, &p.probs()[cols]);
            }
            Ok(None)
        }
        EtaOperator::RowNorm => {
            with_full_width(l, |m| normalize_rows(m));
            Ok(None)
        }
        EtaOperator::Sinkhorn { prior, iters } => {
            let mut res = None;
            with_full_width(l, |m| res = Some(sinkhorn(m, prior.probs(), *iters)));
            Ok(res)
        }
    }
}

fn check_non_negative(l: &LabelMatrix) -> Result<()> {
    for block in l.blocks() {
        if let Some(v) = block.as_slice().iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Data(format!("η requires non-negative finite labels, found {v}")));
        }
    }
    Ok(())
}

/// Runs `f` on a single full-width block, converting if `l` is batched.
fn with_full_width(l: &mut LabelMatrix, f: impl FnOnce(&mut DenseBlock)) {
    if l.n_batches() <= 1 {
        if let Some(b) = l.blocks_mut().first_mut() {
            f(b);
        }
        return;
    }
    let mut dense = l.to_dense();
    f(&mut dense);
    *l = LabelMatrix::from_dense(&dense, l.batch_size()).expect("shape and sign preserved");
}

/// Divides every column with a positive sum by that sum.
pub fn normalize_columns(m: &mut DenseBlock) {
    let sums = m.column_sums();
    let inv: Vec<f64> = sums.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 1.0 }).collect();
    scale_columns(m, &inv);
}

fn scale_columns(m: &mut DenseBlock, factors: &[f64]) {
    let c = m.n_cols();
    if c == 0 {
        return;
    }
    for row in m.as_mut_slice().chunks_mut(c) {
        for (v, f) in row.iter_mut().zip(factors) {
            *v *= f;
        }
    }
}

/// Divides every row with a positive sum by that sum.
pub fn normalize_rows(m: &mut DenseBlock) {
    let c = m.n_cols();
    if c == 0 {
        return;
    }
    for row in m.as_mut_slice().chunks_mut(c) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    }
}

/// One Sinkhorn pass: scale columns toward `R·p` (`R` the number of nonzero
/// rows, `p` renormalized over nonzero columns), then L1-normalize rows.
fn sinkhorn_pass(m: &mut DenseBlock, prior: &[f64]) {
    let sums = m.column_sums();
    let active_rows = m.row_sums().iter().filter(|&&s| s > 0.0).count() as f64;
    let p_active: f64 = sums.iter().zip(prior).filter(|(&s, _)| s > 0.0).map(|(_, p)| p).sum();
    if p_active <= 0.0 {
        return;
    }
    let factors: Vec<f64> = sums
        .iter()
        .zip(prior)
        .map(|(&s, &p)| if s > 0.0 { active_rows * p / p_active / s } else { 1.0 })
        .collect();
    scale_columns(m, &factors);
    normalize_rows(m);
}

/// Fixed number of Sinkhorn passes; returns the final residuals.
pub fn sinkhorn(m: &mut DenseBlock, prior: &[f64], passes: usize) -> MarginalResiduals {
    for _ in 0..passes {
        sinkhorn_pass(m, prior);
    }
    marginal_residuals(m, prior)
}

/// Sinkhorn passes until both residuals fall to `tol` or `max_passes` is
/// reached. Returns the residuals and the number of passes run.
pub fn sinkhorn_to_tolerance(m: &mut DenseBlock, prior: &[f64], tol: f64, max_passes: usize) -> (MarginalResiduals, usize) {
    let mut res = marginal_residuals(m, prior);
    let mut passes = 0;
    while res.max() > tol && passes < max_passes {
        sinkhorn_pass(m, prior);
        passes += 1;
        res = marginal_residuals(m, prior);
    }
    (res, passes)
}

pub fn marginal_residuals(m: &DenseBlock, prior: &[f64]) -> MarginalResiduals {
    let row = m
        .row_sums()
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);
    let sums = m.column_sums();
    let total: f64 = sums.iter().sum();
    let p_active: f64 = sums.iter().zip(prior).filter(|(&s, _)| s > 0.0).map(|(_, p)| p).sum();
    let col = if total > 0.0 && p_active > 0.0 {
        sums.iter()
            .zip(prior)
            .filter(|(&s, _)| s > 0.0)
            .map(|(&s, &p)| (s / total - p / p_active).abs())
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    MarginalResiduals { row, col }
}

/// Checks `r ∈ (1, 2]`, also accepting `r = 1` as the identity power.
pub fn validate_gamma(r: f64) -> Result<()> {
    if (1.0..=2.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("gamma power r must lie in (1, 2] (or be 1), got {r}")))
    }
}

/// Element-wise power `r` followed by column L1 normalization.
pub fn gamma_transform(l: &LabelMatrix, r: f64) -> Result<LabelMatrix> {
    let mut out = l.clone();
    gamma_in_place(&mut out, r)?;
    Ok(out)
}

pub(crate) fn gamma_in_place(l: &mut LabelMatrix, r: f64) -> Result<()> {
    validate_gamma(r)?;
    check_non_negative(l)?;
    for block in l.blocks_mut() {
        if r != 1.0 {
            for v in block.as_mut_slice() {
                *v = v.powf(r);
            }
        }
        normalize_columns(block);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(rows: &[&[f64]], batch: usize) -> LabelMatrix {
        LabelMatrix::from_dense(&DenseBlock::from_rows(rows).unwrap(), batch).unwrap()
    }

    #[test]
    fn colnorm_single_column() {
        let (out, _) = apply_eta(&lm(&[&[1.0], &[3.0]], 1), &EtaOperator::ColNorm).unwrap();
        assert_eq!(out.to_dense().as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn rownorm_leaves_zero_rows() {
        let (out, _) = apply_eta(&lm(&[&[1.0, 3.0], &[0.0, 0.0]], 2), &EtaOperator::RowNorm).unwrap();
        assert_eq!(out.to_dense().as_slice(), &[0.25, 0.75, 0.0, 0.0]);
    }

    #[test]
    fn class_prior_scales_after_colnorm() {
        let p = ClassPrior::new(vec![0.2, 0.8]).unwrap();
        let (out, _) = apply_eta(&lm(&[&[1.0, 2.0], &[1.0, 2.0]], 1), &EtaOperator::ClassPrior(p)).unwrap();
        let d = out.to_dense();
        assert!((d.get(0, 0) - 0.1).abs() < 1e-15);
        assert!((d.get(1, 1) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn every_operator_preserves_zero_matrix() {
        let zero = LabelMatrix::zeros(4, 3, 3).unwrap();
        let p = ClassPrior::uniform(3);
        for op in [
            EtaOperator::None,
            EtaOperator::RowNorm,
            EtaOperator::ColNorm,
            EtaOperator::ClassPrior(p.clone()),
            EtaOperator::sinkhorn(p),
        ] {
            assert_eq!(apply_eta(&zero, &op).unwrap().0, zero, "{op}");
        }
    }

    #[test]
    fn sinkhorn_two_by_two() {
        let mut m = DenseBlock::from_rows(&[[1.0, 1.0], [1.0, 3.0]]).unwrap();
        let (res, _) = sinkhorn_to_tolerance(&mut m, &[0.5, 0.5], 1e-12, 10_000);
        assert!(res.max() <= 1e-12);
        for s in m.row_sums().iter().chain(&m.column_sums()) {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sinkhorn_skips_zero_rows_and_columns() {
        let mut m = DenseBlock::from_rows(&[[1.0, 0.0, 2.0], [0.0, 0.0, 0.0], [3.0, 0.0, 1.0]]).unwrap();
        let (res, _) = sinkhorn_to_tolerance(&mut m, &[0.25, 0.25, 0.5], 1e-10, 10_000);
        assert!(res.max() <= 1e-10);
        assert_eq!(m.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(m.column(1), vec![0.0; 3]);
        // active prior renormalized to [1/3, 2/3] over two active rows
        let cs = m.column_sums();
        assert!((cs[0] - 2.0 / 3.0).abs() < 1e-9 && (cs[2] - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn negative_entries_rejected() {
        let mut l = LabelMatrix::zeros(1, 1, 1).unwrap();
        l.set(0, 0, -1.0);
        assert!(apply_eta(&l, &EtaOperator::ColNorm).is_err());
    }

    #[test]
    fn prior_length_checked() {
        let l = LabelMatrix::zeros(2, 3, 3).unwrap();
        assert!(apply_eta(&l, &EtaOperator::ClassPrior(ClassPrior::uniform(2))).is_err());
    }

    #[test]
    fn gamma_examples() {
        let out = gamma_transform(&lm(&[&[4.0], &[1.0]], 1), 2.0).unwrap();
        let d = out.to_dense();
        assert!((d.get(0, 0) - 16.0 / 17.0).abs() < 1e-15);
        assert!((d.get(1, 0) - 1.0 / 17.0).abs() < 1e-15);
        let one_hot = lm(&[&[0.0], &[1.0], &[0.0]], 1);
        assert_eq!(gamma_transform(&one_hot, 1.5).unwrap(), one_hot);
        let r1 = gamma_transform(&lm(&[&[1.0], &[3.0]], 1), 1.0).unwrap();
        assert_eq!(r1.to_dense().as_slice(), &[0.25, 0.75]);
        assert!(gamma_transform(&one_hot, 2.5).is_err());
        assert!(gamma_transform(&one_hot, 0.5).is_err());
    }

    #[test]
    fn batched_rownorm_matches_full_width() {
        let rows: &[&[f64]] = &[&[1.0, 2.0, 3.0], &[0.0, 4.0, 0.0]];
        let full = apply_eta(&lm(rows, 3), &EtaOperator::RowNorm).unwrap().0;
        let batched = apply_eta(&lm(rows, 2), &EtaOperator::RowNorm).unwrap().0;
        assert_eq!(full.to_dense(), batched.to_dense());
    }
}
