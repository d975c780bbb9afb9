//! Decisions, the logistic-regression baseline, late fusion and evaluation.

mod logreg;

use std::fmt::{self, Write as _};

use rayon::prelude::*;

pub use logreg::{predict_logreg, train_logreg, train_sgd, LogRegFit, LogRegGrid, LogRegModel, LogRegParams};

use crate::error::{Error, Result};
use crate::matrix::DenseBlock;
use crate::rng;

/// Floor applied to diffusion probabilities before taking logs.
pub const FUSION_EPSILON: f64 = 1e-12;

/// Ranked `(class, score)` lists, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub ranked: Vec<Vec<(usize, f64)>>,
}

impl Prediction {
    pub fn top1(&self) -> Vec<usize> {
        self.ranked.iter().map(|r| r.first().map_or(0, |&(c, _)| c)).collect()
    }
}

/// Keeps the `top_k` best classes of every row, by descending score with
/// ties going to the lower class index.
pub fn decide(scores: &DenseBlock, top_k: usize) -> Result<Prediction> {
    if let Some(v) = scores.as_slice().iter().find(|v| v.is_nan()) {
        return Err(Error::Data(format!("cannot rank non-numeric score {v}")));
    }
    let k = top_k.min(scores.n_cols());
    let ranked = (0..scores.n_rows())
        .into_par_iter()
        .map(|i| {
            let mut r: Vec<(usize, f64)> = scores.row(i).iter().copied().enumerate().collect();
            r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            r.truncate(k);
            r
        })
        .collect();
    Ok(Prediction { ranked })
}

/// Fraction of rows whose true class is among the ranked classes.
pub fn evaluate_topk(pred: &Prediction, truth: &[usize]) -> Result<f64> {
    if pred.ranked.len() != truth.len() {
        return Err(Error::shape("evaluate_topk", pred.ranked.len(), truth.len()));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = pred
        .ranked
        .iter()
        .zip(truth)
        .filter(|(r, &t)| r.iter().any(|&(c, _)| c == t))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// [`decide`] followed by [`evaluate_topk`].
pub fn topk_accuracy(scores: &DenseBlock, truth: &[usize], k: usize) -> Result<f64> {
    evaluate_topk(&decide(scores, k)?, truth)
}

pub fn top5_accuracy(scores: &DenseBlock, truth: &[usize]) -> Result<f64> {
    topk_accuracy(scores, truth, 5)
}

/// Diffusion scores as log-probabilities: rows L1-normalized, entries
/// floored at [`FUSION_EPSILON`].
pub fn diffusion_log_probs(scores: &DenseBlock) -> Result<DenseBlock> {
    let mut out = scores.clone();
    for i in 0..out.n_rows() {
        let row = out.row_mut(i);
        if row.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Data(format!("diffusion scores of row {i} are not non-negative and finite")));
        }
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            let p = if s > 0.0 { *v / s } else { 0.0 };
            *v = p.max(FUSION_EPSILON).ln();
        }
    }
    Ok(out)
}

/// `a·log p_logreg + (1 − a)·log p_diffusion`.
pub fn fuse(diffusion_scores: &DenseBlock, logreg_log_probs: &DenseBlock, a: f64) -> Result<DenseBlock> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::Parameter(format!("fusion weight must lie in [0, 1], got {a}")));
    }
    if diffusion_scores.n_rows() != logreg_log_probs.n_rows() || diffusion_scores.n_cols() != logreg_log_probs.n_cols() {
        return Err(Error::shape(
            "fuse",
            format!("{}x{}", diffusion_scores.n_rows(), diffusion_scores.n_cols()),
            format!("{}x{}", logreg_log_probs.n_rows(), logreg_log_probs.n_cols()),
        ));
    }
    let mut out = diffusion_log_probs(diffusion_scores)?;
    for (o, &l) in out.as_mut_slice().iter_mut().zip(logreg_log_probs.as_slice()) {
        *o = a * l + (1.0 - a) * *o;
    }
    Ok(out)
}

/// `{0, 0.1, …, 1}`.
pub fn default_fusion_grid() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// Mean and sample standard deviation (`n − 1` denominator) of accuracies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Absent for fewer than two runs.
    pub std: Option<f64>,
    pub runs: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 };
        let std = (n >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Self { mean, std, runs: n }
    }
}

impl fmt::Display for Summary {
    /// Percentages with two decimals, e.g. `75.40 ± 0.64`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", 100.0 * self.mean)?;
        if let Some(s) = self.std {
            write!(f, " ± {:.2}", 100.0 * s)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub config: String,
    pub run: usize,
    pub accuracy: f64,
}

/// Per-run accuracies of one or more configurations, with optional
/// per-iteration accuracy curves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub curves: Vec<(String, Vec<f64>)>,
}

impl EvalReport {
    pub fn push(&mut self, config: impl Into<String>, run: usize, accuracy: f64) {
        self.records.push(EvalRecord {
            config: config.into(),
            run,
            accuracy,
        });
    }

    /// Configurations in first-appearance order.
    pub fn configs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.config) {
                out.push(r.config.clone());
            }
        }
        out
    }

    pub fn summary(&self, config: &str) -> Summary {
        let v: Vec<f64> = self.records.iter().filter(|r| r.config == config).map(|r| r.accuracy).collect();
        Summary::of(&v)
    }

    /// One tab-separated record per run, then a summary block.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# config\trun\ttop5\n");
        for r in &self.records {
            let _ = writeln!(s, "{}\t{}\t{:.6}", r.config, r.run, r.accuracy);
        }
        for (name, curve) in &self.curves {
            let vals: Vec<String> = curve.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "# curve\t{name}\t{}", vals.join(" "));
        }
        s.push_str("# summary: config\tmean ± std (%)\truns\n");
        for c in self.configs() {
            let sm = self.summary(&c);
            let _ = writeln!(s, "# {c}\t{sm}\t{}", sm.runs);
        }
        s
    }
}

impl EvalReport {
    /// Parses [`EvalReport::to_text`] output. The summary block is
    /// recomputed from the records and ignored here.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut report = EvalReport::default();
        for (n, line) in text.lines().enumerate() {
            let bad = || Error::Format(format!("report line {}: {line:?}", n + 1));
            if let Some(rest) = line.strip_prefix("# curve\t") {
                let (name, vals) = rest.split_once('\t').ok_or_else(bad)?;
                let vals = vals
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                report.curves.push((name.to_string(), vals));
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(config), Some(run), Some(acc), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            report.push(config, run.parse().map_err(|_| bad())?, acc.parse().map_err(|_| bad())?);
        }
        Ok(report)
    }
}

/// Seeds handed to the evaluation closure of [`cross_validate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CvContext {
    pub grid_index: usize,
    pub run: usize,
    /// Seed for drawing the labeled set of this run; identical across grid
    /// points so every configuration sees the same draws.
    pub draw_seed: u64,
    /// Independent stream for everything else in this (grid point, run).
    pub stream_seed: u64,
}

#[derive(Clone, Debug)]
pub struct CvResult<G> {
    pub best_index: usize,
    pub best: G,
    pub means: Vec<f64>,
    pub report: EvalReport,
}

/// Evaluates every grid point over `runs` draws and picks the one with the
/// best mean accuracy (ties to the earlier point). Grid points run in
/// parallel; results do not depend on scheduling.
pub fn cross_validate<G, F>(grid: &[G], runs: usize, master_seed: u64, eval: F) -> Result<CvResult<G>>
where
    G: Clone + fmt::Display + Sync,
    F: Fn(&G, &CvContext) -> Result<f64> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Parameter("cross-validation grid is empty".into()));
    }
    if runs == 0 {
        return Err(Error::Parameter("cross-validation needs at least one run".into()));
    }
    let accs: Vec<Result<Vec<f64>>> = grid
        .par_iter()
        .enumerate()
        .map(|(g, point)| {
            (0..runs)
                .map(|run| {
                    let ctx = CvContext {
                        grid_index: g,
                        run,
                        draw_seed: rng::stream_seed(master_seed, rng::SEED_DRAWS, &[run as u64]),
                        stream_seed: rng::stream_seed(master_seed, rng::CROSS_VALIDATION, &[g as u64, run as u64]),
                    };
                    eval(point, &ctx)
                })
                .collect()
        })
        .collect();
    let mut report = EvalReport::default();
    let mut means = Vec::with_capacity(grid.len());
    for (point, acc) in grid.iter().zip(accs) {
        let acc = acc?;
        for (run, &a) in acc.iter().enumerate() {
            report.push(point.to_string(), run, a);
        }
        means.push(Summary::of(&acc).mean);
    }
    let mut best_index = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best_index] {
            best_index = i;
        }
    }
    Ok(CvResult {
        best_index,
        best: grid[best_index].clone(),
        means,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decide_examples() {
        let one_hot = DenseBlock::from_rows(&[[0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(decide(&one_hot, 1).unwrap().top1(), vec![2]);
        let uniform = DenseBlock::from_rows(&[[0.2; 5]]).unwrap();
        let classes: Vec<usize> = decide(&uniform, 5).unwrap().ranked[0].iter().map(|r| r.0).collect();
        assert_eq!(classes, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn top5_examples() {
        let s = DenseBlock::from_rows(&[[0.9, 0.1, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(top5_accuracy(&s, &[0, 5]).unwrap(), 1.0);
        // class 5 is ranked last in row 0
        assert_eq!(top5_accuracy(&s, &[5, 0]).unwrap(), 0.5);
        let five = DenseBlock::from_rows(&[[0.3, 0.1, 0.2, 0.0, 0.4]]).unwrap();
        assert_eq!(top5_accuracy(&five, &[3]).unwrap(), 1.0);
    }

    #[test]
    fn fusion_endpoints_and_midpoint() {
        let dif = DenseBlock::from_rows(&[[3.0, 1.0], [0.0, 2.0]]).unwrap();
        let lr = DenseBlock::from_rows(&[[0.2f64.ln(), 0.8f64.ln()], [0.6f64.ln(), 0.4f64.ln()]]).unwrap();
        assert_eq!(fuse(&dif, &lr, 1.0).unwrap(), lr);
        assert_eq!(fuse(&dif, &lr, 0.0).unwrap(), diffusion_log_probs(&dif).unwrap());
        let half = fuse(&dif, &lr, 0.5).unwrap();
        // geometric mean of [0.75, 0.25] and [0.2, 0.8], renormalized
        let g = [(0.75f64 * 0.2).sqrt(), (0.25f64 * 0.8).sqrt()];
        let p0 = half.get(0, 0).exp() / (half.get(0, 0).exp() + half.get(0, 1).exp());
        assert!((p0 - g[0] / (g[0] + g[1])).abs() < 1e-12);
        assert!(fuse(&dif, &lr, 1.5).is_err());
    }

    #[test]
    fn zero_scores_are_floored() {
        let lp = diffusion_log_probs(&DenseBlock::from_rows(&[[0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(lp.row(0), &[FUSION_EPSILON.ln(), FUSION_EPSILON.ln()]);
    }

    #[test]
    fn summary_formatting() {
        let s = Summary::of(&[0.75, 0.76, 0.74, 0.75, 0.75]);
        assert_eq!(s.to_string(), "75.00 ± 0.71");
        assert_eq!(Summary::of(&[0.5]).std, None);
        assert_eq!(Summary::of(&[0.5]).to_string(), "50.00");
    }

    #[test]
    fn cross_validation_picks_planted_point() {
        let grid = [1usize, 2, 3];
        let r = cross_validate(&grid, 5, 7, |&g, ctx| Ok(if g == 2 { 0.9 } else { 0.1 * (ctx.run as f64 % 2.0) })).unwrap();
        assert_eq!(r.best, 2);
        assert_eq!(r.report.records.len(), 15);
        let single = cross_validate(&[4usize], 1, 0, |_, _| Ok(0.3)).unwrap();
        assert_eq!(single.best, 4);
        assert!(cross_validate::<usize, _>(&[], 1, 0, |_, _| Ok(0.0)).is_err());
    }

    #[test]
    fn draw_seeds_shared_across_grid() {
        let seen = std::sync::Mutex::new(Vec::new());
        cross_validate(&[0usize, 1], 2, 3, |_, ctx| {
            seen.lock().unwrap().push(*ctx);
            Ok(0.0)
        })
        .unwrap();
        let seen = seen.into_inner().unwrap();
        let find = |g, r| seen.iter().find(|c| c.grid_index == g && c.run == r).copied().unwrap();
        assert_eq!(find(0, 1).draw_seed, find(1, 1).draw_seed);
        assert_ne!(find(0, 1).stream_seed, find(1, 1).stream_seed);
        assert_ne!(find(0, 0).draw_seed, find(0, 1).draw_seed);
    }
}
