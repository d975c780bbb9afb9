//! Low-shot benchmark protocol on labeled-role data.
//!
//! One run draws `n` seeds per class, builds the graph over the seeds and
//! the chosen background, diffuses with early stopping on the validation
//! rows, trains the logistic-regression baseline on the seeds, and scores
//! validation and test rows with both classifiers. Fusion weights are then
//! chosen on validation accuracy averaged over runs.

use crate::classify::{fuse, predict_logreg, top5_accuracy, train_logreg, LogRegGrid, Summary};
use crate::diffusion::{
    diffuse, extend_to_test, extend_with_edges, init_labels, DiffusionConfig, DiffusionRun, EtaOperator, Validation,
};
use crate::error::Result;
use crate::graph::{build_test_edges, EdgeWeighting, GraphBundle, SearchBackend};
use crate::matrix::{DenseBlock, FeatureMatrix};
use crate::synth::{draw_seeds, partition, BackgroundMode, Role, RowRoles};

#[derive(Clone, Debug)]
pub struct LowShotSetup {
    pub k: usize,
    pub weighting: EdgeWeighting,
    pub eta: EtaOperator,
    /// Upper bound of the early-stopping search.
    pub max_iters: usize,
    pub logreg: LogRegGrid,
    pub fusion_grid: Vec<f64>,
}

impl Default for LowShotSetup {
    fn default() -> Self {
        Self {
            k: 10,
            weighting: EdgeWeighting::Constant,
            eta: EtaOperator::ColNorm,
            max_iters: 10,
            logreg: LogRegGrid::default(),
            fusion_grid: crate::classify::default_fusion_grid(),
        }
    }
}

/// Scores of one seed draw.
#[derive(Clone, Debug)]
pub struct RunScores {
    pub diffusion_val: DenseBlock,
    pub diffusion_test: DenseBlock,
    pub logreg_val: DenseBlock,
    pub logreg_test: DenseBlock,
    pub diffusion: DiffusionRun,
}

/// Diffusion-only scores of one seed draw.
pub fn diffusion_run(
    features: &FeatureMatrix,
    roles: &RowRoles,
    n_classes: usize,
    seeds: Vec<(usize, usize)>,
    background: BackgroundMode,
    setup: &LowShotSetup,
) -> Result<(DenseBlock, DenseBlock, DiffusionRun)> {
    let part = partition(roles, seeds, background)?;
    let seed_f = features.select_rows(&part.seed_rows());
    let bg_f = features.select_rows(part.background());
    let test_f = features.select_rows(part.test());
    let graph = GraphBundle::build(&seed_f, &bg_f, &test_f, setup.k, setup.weighting, SearchBackend::Exact)?;
    let val_rows = roles.rows_with(Role::Validation);
    let nodes = FeatureMatrix::vstack(&[&seed_f, &bg_f])?;
    let val_edges = build_test_edges(&features.select_rows(&val_rows), &nodes, setup.k, &setup.weighting)?;
    let validation = Validation::new(val_edges.clone(), roles.labels_of(&val_rows)?);
    let l0 = init_labels(&part, n_classes, n_classes)?;
    let cfg = DiffusionConfig::default().with_eta(setup.eta.clone()).with_iters(setup.max_iters);
    let run = diffuse(&graph, &l0, &cfg, Some(&validation))?;
    let val = extend_with_edges(&val_edges, &run.labels)?.scores;
    let test = extend_to_test(&graph, &run.labels)?.scores;
    Ok((val, test, run))
}

/// Both classifiers on one seed draw.
pub fn lowshot_run(
    features: &FeatureMatrix,
    roles: &RowRoles,
    n_classes: usize,
    shots: usize,
    draw_seed: u64,
    background: BackgroundMode,
    setup: &LowShotSetup,
) -> Result<RunScores> {
    let seeds = draw_seeds(roles, n_classes, shots, draw_seed)?;
    let (diffusion_val, diffusion_test, diffusion) =
        diffusion_run(features, roles, n_classes, seeds.clone(), background, setup)?;
    let seed_rows: Vec<usize> = seeds.iter().map(|s| s.0).collect();
    let seed_labels: Vec<usize> = seeds.iter().map(|s| s.1).collect();
    let val_rows = roles.rows_with(Role::Validation);
    let val_f = features.select_rows(&val_rows);
    let val_y = roles.labels_of(&val_rows)?;
    let fit = train_logreg(
        &features.select_rows(&seed_rows),
        &seed_labels,
        n_classes,
        Some((&val_f, &val_y)),
        &setup.logreg,
        draw_seed,
    )?;
    Ok(RunScores {
        diffusion_val,
        diffusion_test,
        logreg_val: predict_logreg(&fit.model, &val_f)?,
        logreg_test: predict_logreg(&fit.model, &features.select_rows(&roles.rows_with(Role::Test)))?,
        diffusion,
    })
}

/// Test top-5 summaries of one seed count.
#[derive(Clone, Debug)]
pub struct LowShotSummary {
    pub diffusion: Summary,
    pub logreg: Summary,
    pub fused: Summary,
    /// Fusion weight chosen on validation.
    pub a: f64,
    pub best_iterations: Vec<usize>,
}

/// Chooses the fusion weight maximizing mean validation accuracy over the
/// runs (ties to the smaller weight) and reports test accuracies.
pub fn summarize_runs(runs: &[RunScores], roles: &RowRoles, fusion_grid: &[f64]) -> Result<LowShotSummary> {
    let val_y = roles.labels_of(&roles.rows_with(Role::Validation))?;
    let test_y = roles.labels_of(&roles.rows_with(Role::Test))?;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &a in fusion_grid {
        let mut acc = 0.0;
        for r in runs {
            acc += top5_accuracy(&fuse(&r.diffusion_val, &r.logreg_val, a)?, &val_y)?;
        }
        if acc > best.0 {
            best = (acc, a);
        }
    }
    let a = best.1;
    let mut dif = Vec::new();
    let mut lr = Vec::new();
    let mut fused = Vec::new();
    for r in runs {
        dif.push(top5_accuracy(&r.diffusion_test, &test_y)?);
        lr.push(top5_accuracy(&r.logreg_test, &test_y)?);
        fused.push(top5_accuracy(&fuse(&r.diffusion_test, &r.logreg_test, a)?, &test_y)?);
    }
    Ok(LowShotSummary {
        diffusion: Summary::of(&dif),
        logreg: Summary::of(&lr),
        fused: Summary::of(&fused),
        a,
        best_iterations: runs.iter().map(|r| r.diffusion.best_iteration).collect(),
    })
}
