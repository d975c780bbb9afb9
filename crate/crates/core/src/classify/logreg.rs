use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::topk_accuracy;
use crate::error::{Error, Result};
use crate::matrix::{DenseBlock, FeatureMatrix};

/// SGD hyper-parameters of the multinomial logistic regression.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRegParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Coefficient of `½‖W‖²` (the bias is not penalized).
    pub l2: f64,
    pub iters: usize,
}

impl Default for LogRegParams {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            batch_size: 64,
            l2: 1e-4,
            iters: 300,
        }
    }
}

impl fmt::Display for LogRegParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lr={} batch={} l2={} iters={}",
            self.learning_rate, self.batch_size, self.l2, self.iters
        )
    }
}

/// Cartesian grid of hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRegGrid {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub l2: Vec<f64>,
    pub iters: Vec<usize>,
    /// Rank cut-off of the accuracy used to compare grid points.
    pub selection_top_k: usize,
}

impl Default for LogRegGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.5, 2.0],
            batch_sizes: vec![64],
            l2: vec![1e-4, 1e-3, 1e-2],
            iters: vec![300],
            selection_top_k: 5,
        }
    }
}

impl LogRegGrid {
    pub fn single(params: LogRegParams) -> Self {
        Self {
            learning_rates: vec![params.learning_rate],
            batch_sizes: vec![params.batch_size],
            l2: vec![params.l2],
            iters: vec![params.iters],
            selection_top_k: 5,
        }
    }

    pub fn points(&self) -> Vec<LogRegParams> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &batch_size in &self.batch_sizes {
                for &l2 in &self.l2 {
                    for &iters in &self.iters {
                        out.push(LogRegParams {
                            learning_rate,
                            batch_size,
                            l2,
                            iters,
                        });
                    }
                }
            }
        }
        out
    }
}

/// `C×d` weights and `C` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRegModel {
    n_classes: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    pub params: LogRegParams,
}

impl LogRegModel {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
            params: LogRegParams::default(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Weights followed by biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        let nw = self.weights.len();
        if p.len() != nw + self.bias.len() {
            return Err(Error::shape("LogRegModel::set_parameters", nw + self.bias.len(), p.len()));
        }
        self.weights.copy_from_slice(&p[..nw]);
        self.bias.copy_from_slice(&p[nw..]);
        Ok(())
    }

    fn logits(&self, x: &[f32], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = self.bias[c] + w.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum::<f64>();
        }
    }

    /// Mean cross-entropy over `(x, y)` plus `½·l2·‖W‖²`, and its gradient
    /// laid out like [`Self::parameters`].
    pub fn loss_and_gradient(&self, x: &FeatureMatrix, y: &[usize], l2: f64) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        if y.len() != x.n_rows() {
            return Err(Error::shape("loss_and_gradient", x.n_rows(), y.len()));
        }
        if let Some(&c) = y.iter().find(|&&c| c >= self.n_classes) {
            return Err(Error::Data(format!("label {c} out of range")));
        }
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let (loss, mut grad) = self.batch_gradient(x, y, &rows);
        let nw = self.weights.len();
        let reg: f64 = self.weights.iter().map(|w| w * w).sum::<f64>() * 0.5 * l2;
        for (g, w) in grad[..nw].iter_mut().zip(&self.weights) {
            *g += l2 * w;
        }
        Ok((loss + reg, grad))
    }

    /// Unregularized mean loss and gradient over `rows`.
    fn batch_gradient(&self, x: &FeatureMatrix, y: &[usize], rows: &[usize]) -> (f64, Vec<f64>) {
        let (c, d) = (self.n_classes, self.dim);
        let mut grad = vec![0.0; c * d + c];
        let mut loss = 0.0;
        let mut z = vec![0.0; c];
        for &i in rows {
            let xi = x.row(i);
            self.logits(xi, &mut z);
            let lse = log_sum_exp(&z);
            loss += lse - z[y[i]];
            for k in 0..c {
                let p = (z[k] - lse).exp() - if k == y[i] { 1.0 } else { 0.0 };
                for (g, &v) in grad[k * d..(k + 1) * d].iter_mut().zip(xi) {
                    *g += p * f64::from(v);
                }
                grad[c * d + k] += p;
            }
        }
        let m = rows.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        (loss / m, grad)
    }

    fn check_input(&self, x: &FeatureMatrix) -> Result<()> {
        if x.dim() != self.dim && !x.is_empty() {
            return Err(Error::shape("logistic regression input", self.dim, x.dim()));
        }
        Ok(())
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Trains one model by minibatch SGD. Each minibatch cycles through the
/// classes and takes the next example of a per-class shuffled queue, so every
/// class is seen equally often regardless of its size.
pub fn train_sgd(x: &FeatureMatrix, y: &[usize], n_classes: usize, params: &LogRegParams, seed: u64) -> Result<LogRegModel> {
    if y.len() != x.n_rows() {
        return Err(Error::shape("train_logreg", x.n_rows(), y.len()));
    }
    if params.batch_size == 0 || !(params.learning_rate > 0.0) || !(params.l2 >= 0.0) {
        return Err(Error::Parameter(format!("invalid logistic-regression parameters: {params}")));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        if c >= n_classes {
            return Err(Error::Data(format!("label {c} out of range for {n_classes} classes")));
        }
        per_class[c].push(i);
    }
    if let Some(c) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("class {c} has no training example")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for list in &mut per_class {
        list.shuffle(&mut rng);
    }
    let mut cursor = vec![0usize; n_classes];
    let mut next_class = 0usize;

    let mut model = LogRegModel::zeros(n_classes, x.dim());
    model.params = *params;
    let nw = model.weights.len();
    let mut batch = Vec::with_capacity(params.batch_size);
    for _ in 0..params.iters {
        batch.clear();
        for _ in 0..params.batch_size {
            let c = next_class;
            next_class = (next_class + 1) % n_classes;
            if cursor[c] == per_class[c].len() {
                per_class[c].shuffle(&mut rng);
                cursor[c] = 0;
            }
            batch.push(per_class[c][cursor[c]]);
            cursor[c] += 1;
        }
        let (_, grad) = model.batch_gradient(x, y, &batch);
        let lr = params.learning_rate;
        for (w, g) in model.weights.iter_mut().zip(&grad[..nw]) {
            *w -= lr * (g + params.l2 * *w);
        }
        for (b, g) in model.bias.iter_mut().zip(&grad[nw..]) {
            *b -= lr * g;
        }
    }
    if model.weights.iter().chain(&model.bias).any(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("training diverged with {params}")));
    }
    Ok(model)
}

/// Grid-search outcome.
#[derive(Clone, Debug)]
pub struct LogRegFit {
    pub model: LogRegModel,
    pub params: LogRegParams,
    /// Selection accuracy of every grid point, in grid order; `None` when
    /// training diverged.
    pub scores: Vec<(LogRegParams, Option<f64>)>,
}

/// Trains every grid point and keeps the one with the best top-k accuracy
/// on `validation` (or on the training set when no validation rows are
/// given). Ties go to the earlier grid point.
pub fn train_logreg(
    x: &FeatureMatrix,
    y: &[usize],
    n_classes: usize,
    validation: Option<(&FeatureMatrix, &[usize])>,
    grid: &LogRegGrid,
    seed: u64,
) -> Result<LogRegFit> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Parameter("empty logistic-regression grid".into()));
    }
    let (vx, vy) = validation.unwrap_or((x, y));
    let fits: Vec<Result<Option<(LogRegModel, f64)>>> = points
        .par_iter()
        .map(|p| match train_sgd(x, y, n_classes, p, seed) {
            Ok(m) => {
                let acc = topk_accuracy(&predict_logreg(&m, vx)?, vy, grid.selection_top_k.min(n_classes))?;
                Ok(Some((m, acc)))
            }
            Err(Error::Parameter(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut best: Option<(LogRegModel, LogRegParams, f64)> = None;
    let mut scores = Vec::with_capacity(points.len());
    for (p, fit) in points.iter().zip(fits) {
        let fit = fit?;
        scores.push((*p, fit.as_ref().map(|(_, a)| *a)));
        if let Some((m, acc)) = fit {
            if best.as_ref().is_none_or(|(_, _, b)| acc > *b) {
                best = Some((m, *p, acc));
            }
        }
    }
    let (model, params, _) = best.ok_or_else(|| Error::Parameter("every grid point diverged".into()))?;
    Ok(LogRegFit { model, params, scores })
}

/// Log-softmax class scores, one row per input row.
pub fn predict_logreg(model: &LogRegModel, x: &FeatureMatrix) -> Result<DenseBlock> {
    model.check_input(x)?;
    let c = model.n_classes;
    let mut out = DenseBlock::zeros(x.n_rows(), c);
    if c == 0 {
        return Ok(out);
    }
    out.as_mut_slice()
        .par_chunks_mut(c)
        .enumerate()
        .for_each(|(i, row)| {
            model.logits(x.row(i), row);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let cx = if c == 0 { -1.5 } else { 1.5 };
            rows.push([cx + noise.sample(&mut rng) as f32, noise.sample(&mut rng) as f32]);
            y.push(c);
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn separable_blobs() {
        let (x, y) = blobs(200, 1);
        let (vx, vy) = blobs(200, 2);
        let mut grid = LogRegGrid::single(LogRegParams::default());
        grid.selection_top_k = 1;
        let fit = train_logreg(&x, &y, 2, Some((&vx, &vy)), &grid, 3).unwrap();
        assert!(topk_accuracy(&predict_logreg(&fit.model, &vx).unwrap(), &vy, 1).unwrap() >= 0.99);
    }

    #[test]
    fn one_point_per_class_is_fit() {
        let x = FeatureMatrix::from_rows(&[[0.0f32, 1.0], [1.0, 0.0], [-1.0, -1.0]]).unwrap();
        let y = [0, 1, 2];
        let m = train_sgd(&x, &y, 3, &LogRegParams { batch_size: 3, ..Default::default() }, 0).unwrap();
        assert_eq!(topk_accuracy(&predict_logreg(&m, &x).unwrap(), &y, 1).unwrap(), 1.0);
    }

    #[test]
    fn stronger_l2_shrinks_weights() {
        let (x, y) = blobs(100, 4);
        let weak = train_sgd(&x, &y, 2, &LogRegParams { l2: 1e-4, ..Default::default() }, 0).unwrap();
        let strong = train_sgd(&x, &y, 2, &LogRegParams { l2: 0.5, ..Default::default() }, 0).unwrap();
        assert!(strong.weight_norm() < weak.weight_norm());
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = LogRegModel::zeros(4, 3);
        let p = predict_logreg(&m, &FeatureMatrix::zeros(2, 3)).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v - 0.25f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn rows_are_log_probabilities() {
        let mut m = LogRegModel::zeros(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p: Vec<f64> = (0..9).map(|_| rng.random_range(-3.0..3.0)).collect();
        m.set_parameters(&p).unwrap();
        let (x, _) = blobs(10, 5);
        let out = predict_logreg(&m, &x).unwrap();
        for i in 0..out.n_rows() {
            assert!((out.row(i).iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_class_rejected() {
        let (x, y) = blobs(10, 0);
        assert!(matches!(train_sgd(&x, &y, 3, &LogRegParams::default(), 0), Err(Error::Data(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = blobs(30, 6);
        let mut m = LogRegModel::zeros(2, 2);
        m.set_parameters(&[0.3, -0.2, 0.5, 0.1, 0.05, -0.05]).unwrap();
        let (_, g) = m.loss_and_gradient(&x, &y, 0.1).unwrap();
        let p = m.parameters();
        for j in 0..p.len() {
            let h = 1e-6;
            let mut plus = p.clone();
            plus[j] += h;
            let mut minus = p.clone();
            minus[j] -= h;
            m.set_parameters(&plus).unwrap();
            let lp = m.loss_and_gradient(&x, &y, 0.1).unwrap().0;
            m.set_parameters(&minus).unwrap();
            let lm = m.loss_and_gradient(&x, &y, 0.1).unwrap().0;
            assert!(((lp - lm) / (2.0 * h) - g[j]).abs() < 1e-6);
        }
    }
}
