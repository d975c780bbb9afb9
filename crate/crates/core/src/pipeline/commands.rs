use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};

use super::workspace::{Workspace, INPUT_PRODUCER};
use crate::classify::{
    default_fusion_grid, fuse, predict_logreg, top5_accuracy, train_logreg, EvalReport, LogRegGrid,
};
use crate::diffusion::{
    diffuse, extend_to_test, extend_with_edges, init_labels, Backtrack, DiffusionConfig, EtaOperator, FillStats, Trace,
    Validation,
};
use crate::error::{Error, Result};
use crate::features::{apply_pca, fit_pca, PcaModel};
use crate::graph::{
    background_block, build_test_edges, median_neighbor_distance, BlockLists, EdgeWeighting, GraphBundle,
    SearchBackend,
};
use crate::knn::{build_ivf, IvfIndex, IvfParams, NeighborList};
use crate::labels::{ClassPrior, DatasetPartition};
use crate::matrix::{l2_normalize_rows, DenseBlock, FeatureMatrix};
use crate::rng;
use crate::synth::{draw_seeds, generate, partition, BackgroundMode, Role, RowRoles, SynthSpec};

pub const SPEC_FILE: &str = "synth.toml";
pub const RAW_FILE: &str = "raw.fmat";
pub const INPUT_FILE: &str = "input.fmat";
pub const ROWS_FILE: &str = "rows.txt";
pub const FEATURES_FILE: &str = "features.fmat";
pub const PCA_FILE: &str = "pca.pcam";
pub const BB_FILE: &str = "bb.knnl";
pub const PARTITION_FILE: &str = "partition.txt";
pub const GRAPH_DIR: &str = "graph";
pub const VAL_EDGES_FILE: &str = "val_edges.knnl";
pub const LABELS_FILE: &str = "labels.fmat";
pub const TEST_SCORES_FILE: &str = "test_scores.fmat";
pub const VAL_SCORES_FILE: &str = "val_scores.fmat";
pub const FILL_FILE: &str = "fill.txt";
pub const TRACE_FILE: &str = "trace.trce";
pub const LOGREG_TEST_FILE: &str = "logreg_test.fmat";
pub const LOGREG_VAL_FILE: &str = "logreg_val.fmat";
pub const REPORT_FILE: &str = "report.txt";

fn load_roles(ws: &Workspace) -> Result<RowRoles> {
    RowRoles::from_text(&fs::read_to_string(ws.require(ROWS_FILE, "synth")?)?)
}

fn load_partition(ws: &Workspace) -> Result<DatasetPartition> {
    DatasetPartition::from_text(&fs::read_to_string(ws.require(PARTITION_FILE, "build-graph")?)?)
}

fn n_classes(ws: &Workspace, part: &DatasetPartition) -> Result<usize> {
    match ws.param("n_classes") {
        Some(c) => c.parse().map_err(|_| Error::Format(format!("bad n_classes {c:?} in manifest"))),
        None => Ok(part.seeds().iter().map(|s| s.1 + 1).max().unwrap_or(0)),
    }
}

fn save_scores(ws: &mut Workspace, name: &str, rel: &str, scores: &DenseBlock, producer: &str) -> Result<()> {
    scores.to_feature_matrix()?.save(ws.path(rel))?;
    ws.record(name, rel, producer)
}

/// Generate a Gaussian-mixture dataset.
#[derive(Args, Clone, Debug, Default)]
pub struct SynthArgs {
    /// TOML dataset description; defaults to the copy already in the workspace.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

pub fn synth(ws: &mut Workspace, args: &SynthArgs) -> Result<()> {
    if let Some(src) = &args.spec {
        fs::copy(src, ws.path(SPEC_FILE))?;
    }
    let text = fs::read_to_string(ws.require(SPEC_FILE, "synth --spec <file>")?)?;
    let spec = SynthSpec::from_toml(&text)?;
    let data = generate(&spec)?;
    data.features.save(ws.path(RAW_FILE))?;
    fs::write(ws.path(ROWS_FILE), data.roles.to_text())?;
    ws.record("spec", SPEC_FILE, INPUT_PRODUCER)?;
    ws.record("raw", RAW_FILE, "synth")?;
    ws.record("rows", ROWS_FILE, "synth")?;
    ws.set_param("seed", spec.seed);
    ws.set_param("n_classes", spec.n_classes);
    Ok(())
}

#[derive(ValueEnum, Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PcaMode {
    /// Fit on the unlabeled background rows.
    #[default]
    Fit,
    /// Keep the input coordinates.
    Identity,
}

/// Reduce descriptors with PCA and L2-normalize them.
#[derive(Args, Clone, Debug)]
pub struct PreprocessArgs {
    /// Raw descriptors (FMAT); defaults to the synthesized or previously
    /// imported ones.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Row roles and classes of imported descriptors, one `role class`
    /// line per row (`-` for no class).
    #[arg(long, requires = "input")]
    pub rows: Option<PathBuf>,
    /// Master seed for imported data (synthesized data records its own).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dimension (defaults to the input dimension).
    #[arg(long)]
    pub d_out: Option<usize>,
    #[arg(long, value_enum, default_value_t = PcaMode::Fit)]
    pub pca: PcaMode,
    /// Skip the final L2 normalization.
    #[arg(long)]
    pub no_normalize: bool,
}

pub fn preprocess(ws: &mut Workspace, args: &PreprocessArgs) -> Result<()> {
    let src = if let Some(p) = &args.input {
        fs::copy(p, ws.path(INPUT_FILE))?;
        ws.record("input", INPUT_FILE, INPUT_PRODUCER)?;
        if let Some(rows) = &args.rows {
            fs::copy(rows, ws.path(ROWS_FILE))?;
            let roles = load_roles(ws)?;
            ws.record("rows", ROWS_FILE, INPUT_PRODUCER)?;
            ws.set_param("n_classes", roles.n_classes());
        }
        INPUT_FILE
    } else if ws.exists(INPUT_FILE) {
        INPUT_FILE
    } else {
        RAW_FILE
    };
    if let Some(seed) = args.seed {
        ws.set_param("seed", seed);
    }
    let raw = FeatureMatrix::load(ws.require(src, "synth")?)?;
    let d_out = args.d_out.unwrap_or(raw.dim());
    let model = match args.pca {
        PcaMode::Identity => {
            if d_out != raw.dim() {
                return Err(Error::Parameter("--pca identity keeps the input dimension".into()));
            }
            PcaModel::identity(raw.dim())
        }
        PcaMode::Fit => {
            let unlabeled: Vec<usize> = if ws.exists(ROWS_FILE) {
                let roles = load_roles(ws)?;
                (0..roles.len())
                    .filter(|&i| matches!(roles.roles[i], Role::Background | Role::OutOfDomain))
                    .collect()
            } else {
                Vec::new()
            };
            if unlabeled.is_empty() {
                fit_pca(&raw, d_out)?
            } else {
                fit_pca(&raw.select_rows(&unlabeled), d_out)?
            }
        }
    };
    let mut out = apply_pca(&model, &raw)?;
    if !args.no_normalize {
        out = l2_normalize_rows(&out);
    }
    model.save(ws.path(PCA_FILE))?;
    out.save(ws.path(FEATURES_FILE))?;
    ws.record("pca", PCA_FILE, "preprocess")?;
    ws.record("features", FEATURES_FILE, "preprocess")?;
    ws.set_param("d_out", d_out);
    Ok(())
}

#[derive(ValueEnum, Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IndexKind {
    #[default]
    Brute,
    Ivf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackgroundArg {
    None,
    InDomain,
    OutOfDomain,
    Both,
}

impl From<BackgroundArg> for BackgroundMode {
    fn from(b: BackgroundArg) -> Self {
        match b {
            BackgroundArg::None => BackgroundMode::None,
            BackgroundArg::InDomain => BackgroundMode::InDomain,
            BackgroundArg::OutOfDomain => BackgroundMode::OutOfDomain,
            BackgroundArg::Both => BackgroundMode::Both,
        }
    }
}

/// Build the k-NN graph (off-line background block, on-line completion, or both).
#[derive(Args, Clone, Debug)]
pub struct BuildGraphArgs {
    /// Only compute the background-to-background block.
    #[arg(long, conflicts_with = "complete")]
    pub background_only: bool,
    /// Reuse the stored background block and add the seed blocks and test edges.
    #[arg(long)]
    pub complete: bool,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// `constant`, `gaussian[:sigma]` or `meaningful:lambda`.
    #[arg(long, default_value = "constant")]
    pub weighting: String,
    #[arg(long, value_enum, default_value_t = IndexKind::Brute)]
    pub index: IndexKind,
    #[arg(long)]
    pub n_lists: Option<usize>,
    #[arg(long)]
    pub n_probe: Option<usize>,
    /// Seeds per class.
    #[arg(long, default_value_t = 1)]
    pub shots: usize,
    /// Seed-draw index.
    #[arg(long, default_value_t = 0)]
    pub run: usize,
    #[arg(long, value_enum, default_value_t = BackgroundArg::InDomain)]
    pub background: BackgroundArg,
}

fn ivf_for(ws: &Workspace, args: &BuildGraphArgs, bg: &FeatureMatrix) -> Result<Option<IvfIndex>> {
    if args.index == IndexKind::Brute || bg.is_empty() {
        return Ok(None);
    }
    let n_lists = args
        .n_lists
        .unwrap_or_else(|| ((bg.n_rows() as f64).sqrt() as usize).clamp(1, bg.n_rows()));
    let seed = rng::stream_seed(ws.master_seed()?, rng::KMEANS, &[]);
    Ok(Some(build_ivf(bg, &IvfParams::new(n_lists).with_seed(seed))?))
}

fn backend<'a>(index: &'a Option<IvfIndex>, n_probe: Option<usize>) -> SearchBackend<'a> {
    match index {
        Some(ix) => SearchBackend::Ivf {
            index: ix,
            n_probe: n_probe.unwrap_or_else(|| ix.default_n_probe()),
        },
        None => SearchBackend::Exact,
    }
}

fn resolve_weighting(ws: &Workspace, spec: &str, reference: &NeighborList) -> Result<EdgeWeighting> {
    if spec == "gaussian" {
        let seed = ws.master_seed()?;
        let sigma = median_neighbor_distance(reference, 1000, seed)
            .ok_or_else(|| Error::Data("cannot derive a gaussian bandwidth from an empty graph".into()))?;
        return Ok(EdgeWeighting::Gaussian { sigma });
    }
    spec.parse()
}

pub fn build_graph(ws: &mut Workspace, args: &BuildGraphArgs) -> Result<()> {
    let features = FeatureMatrix::load(ws.require(FEATURES_FILE, "preprocess")?)?;
    let roles = load_roles(ws)?;
    if roles.len() != features.n_rows() {
        return Err(Error::shape("build-graph", roles.len(), features.n_rows()));
    }
    let mode = BackgroundMode::from(args.background);
    let bg_rows = mode.rows(&roles);
    let bg = features.select_rows(&bg_rows);
    let full = !args.background_only && !args.complete;
    if args.k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if args.k > bg.n_rows() && !bg.is_empty() {
        return Err(Error::Parameter(format!("k = {} exceeds the {} background points", args.k, bg.n_rows())));
    }

    let index = ivf_for(ws, args, &bg)?;
    let bb = if args.background_only || full {
        let t = Instant::now();
        let bb = background_block(&bg, args.k, backend(&index, args.n_probe))?;
        ws.record_timing("timing: background graph", t.elapsed())?;
        bb.save(ws.path(BB_FILE))?;
        ws.record("bb", BB_FILE, "build-graph")?;
        ws.set_param("k", args.k);
        ws.set_param("background", mode.name());
        ws.set_param("n_B", bg.n_rows());
        bb
    } else {
        let bb = NeighborList::load(ws.require(BB_FILE, "build-graph --background-only")?)?;
        let stored_k = ws.param("k").and_then(|k| k.parse::<usize>().ok());
        if bb.query_count() != bg.n_rows() || stored_k != Some(args.k) || ws.param("background") != Some(mode.name()) {
            return Err(Error::Parameter(
                "stored background block was built with a different k or background set".into(),
            ));
        }
        bb
    };
    if args.background_only {
        return Ok(());
    }

    let t = Instant::now();
    let c = ws.param("n_classes").and_then(|c| c.parse().ok()).unwrap_or_else(|| roles.n_classes());
    let draw = rng::stream_seed(ws.master_seed()?, rng::SEED_DRAWS, &[args.run as u64]);
    let seeds = draw_seeds(&roles, c, args.shots, draw)?;
    let part = partition(&roles, seeds, mode)?;
    let seed_f = features.select_rows(&part.seed_rows());
    let test_f = features.select_rows(part.test());
    let weighting = resolve_weighting(ws, &args.weighting, &bb)?;
    let blocks = BlockLists::compute(&seed_f, &bg, args.k, Some(bb), backend(&index, args.n_probe))?;
    let bundle = GraphBundle::from_blocks(&blocks, &seed_f, &bg, &test_f, args.k, weighting)?;
    let val_rows = roles.rows_with(Role::Validation);
    let nodes = FeatureMatrix::vstack(&[&seed_f, &bg])?;
    let val_edges = if val_rows.is_empty() {
        NeighborList::empty(args.k)
    } else {
        build_test_edges(&features.select_rows(&val_rows), &nodes, args.k, &weighting)?
    };
    ws.record_timing("timing: graph completion", t.elapsed())?;

    fs::write(ws.path(PARTITION_FILE), part.to_text())?;
    bundle.save(&ws.path(GRAPH_DIR))?;
    val_edges.save(ws.path(VAL_EDGES_FILE))?;
    ws.record("partition", PARTITION_FILE, "build-graph")?;
    for (name, file) in [("w0", "w0.sprm"), ("w", "w.sprm"), ("test_edges", "test_edges.knnl"), ("graph_meta", "graph.txt")] {
        ws.record(name, &format!("{GRAPH_DIR}/{file}"), "build-graph")?;
    }
    ws.record("val_edges", VAL_EDGES_FILE, "build-graph")?;
    ws.set_param("shots", args.shots);
    ws.set_param("run", args.run);
    ws.set_param("weighting", weighting);
    ws.set_param("n_classes", c);
    Ok(())
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaArg {
    None,
    Rownorm,
    Colnorm,
    ClassPrior,
    Sinkhorn,
}

/// Propagate seed labels over the graph.
#[derive(Args, Clone, Debug)]
pub struct DiffuseArgs {
    /// Fixed iteration count; without it the count is chosen on the
    /// validation rows up to --max-iters.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value_t = EtaArg::Colnorm)]
    pub eta: EtaArg,
    /// Class prior for class-prior and sinkhorn: `uniform` or comma-separated weights.
    #[arg(long, default_value = "uniform")]
    pub prior: String,
    #[arg(long, default_value_t = 5)]
    pub sinkhorn_iters: usize,
    /// Power r of the Γ_r nonlinearity.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub reset_seeds: bool,
    /// Column batch width (defaults to all classes).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated classes recorded for path backtracking.
    #[arg(long, value_delimiter = ',')]
    pub trace_classes: Vec<usize>,
}

fn parse_prior(spec: &str, c: usize) -> Result<ClassPrior> {
    if spec == "uniform" {
        return Ok(ClassPrior::uniform(c));
    }
    let w: Vec<f64> = spec
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::Parameter(format!("bad prior weight {v:?}"))))
        .collect::<Result<_>>()?;
    if w.len() != c {
        return Err(Error::Parameter(format!("prior has {} weights for {c} classes", w.len())));
    }
    ClassPrior::from_weights(&w)
}

pub fn diffuse_cmd(ws: &mut Workspace, args: &DiffuseArgs) -> Result<()> {
    let graph = GraphBundle::load(&ws.require(GRAPH_DIR, "build-graph")?)?;
    let part = load_partition(ws)?;
    let c = n_classes(ws, &part)?;
    let eta = match args.eta {
        EtaArg::None => EtaOperator::None,
        EtaArg::Rownorm => EtaOperator::RowNorm,
        EtaArg::Colnorm => EtaOperator::ColNorm,
        EtaArg::ClassPrior => EtaOperator::ClassPrior(parse_prior(&args.prior, c)?),
        EtaArg::Sinkhorn => EtaOperator::Sinkhorn {
            prior: parse_prior(&args.prior, c)?,
            iters: args.sinkhorn_iters,
        },
    };
    let mut cfg = DiffusionConfig::default()
        .with_eta(eta)
        .with_reset(args.reset_seeds)
        .with_trace(args.trace_classes.clone())
        .with_iters(args.iters.unwrap_or(args.max_iters));
    cfg.gamma_r = args.gamma;
    cfg.batch_size = args.batch_size;
    let batch = args.batch_size.unwrap_or(c.max(1));
    let l0 = init_labels(&part, c, batch)?;
    let val_edges = if ws.exists(VAL_EDGES_FILE) {
        Some(NeighborList::load(ws.path(VAL_EDGES_FILE))?)
    } else {
        None
    };
    let validation = match (&val_edges, args.iters) {
        (Some(edges), None) if edges.query_count() > 0 => {
            let roles = load_roles(ws)?;
            Some(Validation::new(edges.clone(), roles.labels_of(&roles.rows_with(Role::Validation))?))
        }
        _ => None,
    };

    let t = Instant::now();
    let run = diffuse(&graph, &l0, &cfg, validation.as_ref())?;
    ws.record_timing("timing: diffusion", t.elapsed())?;

    save_scores(ws, "labels", LABELS_FILE, &run.labels.to_dense(), "diffuse")?;
    save_scores(ws, "test_scores", TEST_SCORES_FILE, &extend_to_test(&graph, &run.labels)?.scores, "diffuse")?;
    if let Some(edges) = val_edges.filter(|e| e.query_count() > 0) {
        save_scores(ws, "val_scores", VAL_SCORES_FILE, &extend_with_edges(&edges, &run.labels)?.scores, "diffuse")?;
    }
    fs::write(ws.path(FILL_FILE), run.stats.to_text())?;
    ws.record("fill", FILL_FILE, "diffuse")?;
    if !args.trace_classes.is_empty() {
        run.trace.save(ws.path(TRACE_FILE))?;
        ws.record("trace", TRACE_FILE, "diffuse")?;
    }
    ws.set_param("eta", cfg.eta.name());
    ws.set_param("n_iters", run.best_iteration);
    Ok(())
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSpace {
    /// The PCA-reduced, normalized features the graph uses.
    Processed,
    /// The descriptors before preprocessing.
    Raw,
}

/// Train the logistic-regression baseline on the seeds.
#[derive(Args, Clone, Debug)]
pub struct LogRegArgs {
    #[arg(long, value_enum, default_value_t = FeatureSpace::Processed)]
    pub features: FeatureSpace,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 2.0])]
    pub learning_rates: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-4, 1e-3, 1e-2])]
    pub l2: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
}

pub fn logreg(ws: &mut Workspace, args: &LogRegArgs) -> Result<()> {
    let file = match args.features {
        FeatureSpace::Processed => FEATURES_FILE,
        FeatureSpace::Raw if ws.exists(INPUT_FILE) => INPUT_FILE,
        FeatureSpace::Raw => RAW_FILE,
    };
    let features = FeatureMatrix::load(ws.require(file, "preprocess")?)?;
    let roles = load_roles(ws)?;
    let part = load_partition(ws)?;
    let c = n_classes(ws, &part)?;
    let train_x = features.select_rows(&part.seed_rows());
    let train_y: Vec<usize> = part.seeds().iter().map(|s| s.1).collect();
    let val_rows = roles.rows_with(Role::Validation);
    let val_x = features.select_rows(&val_rows);
    let val_y = roles.labels_of(&val_rows)?;
    let grid = LogRegGrid {
        learning_rates: args.learning_rates.clone(),
        batch_sizes: vec![args.batch_size],
        l2: args.l2.clone(),
        iters: vec![args.iters],
        selection_top_k: 5,
    };
    let run: u64 = ws.param("run").and_then(|r| r.parse().ok()).unwrap_or(0);
    let seed = rng::stream_seed(ws.master_seed()?, rng::LOGREG, &[run]);
    let validation = (!val_rows.is_empty()).then_some((&val_x, val_y.as_slice()));
    let fit = train_logreg(&train_x, &train_y, c, validation, &grid, seed)?;
    save_scores(ws, "logreg_test", LOGREG_TEST_FILE, &predict_logreg(&fit.model, &features.select_rows(part.test()))?, "logreg")?;
    if !val_rows.is_empty() {
        save_scores(ws, "logreg_val", LOGREG_VAL_FILE, &predict_logreg(&fit.model, &val_x)?, "logreg")?;
    }
    ws.set_param("logreg", fit.params);
    Ok(())
}

/// Score test predictions and write the evaluation report.
#[derive(Args, Clone, Debug)]
pub struct EvaluateArgs {
    /// Candidate fusion weights (chosen on the validation rows).
    #[arg(long, value_delimiter = ',')]
    pub fusion_grid: Vec<f64>,
    /// Merge into an existing report instead of replacing it.
    #[arg(long)]
    pub append: bool,
}

fn load_dense(ws: &Workspace, rel: &str, producer: &str) -> Result<DenseBlock> {
    Ok(DenseBlock::from_feature_matrix(&FeatureMatrix::load(ws.require(rel, producer)?)?))
}

/// Evaluates the stored scores; returns the report that was written.
pub fn evaluate(ws: &mut Workspace, args: &EvaluateArgs) -> Result<EvalReport> {
    let roles = load_roles(ws)?;
    let part = load_partition(ws)?;
    let truth = roles.labels_of(part.test())?;
    let run: usize = ws.param("run").and_then(|r| r.parse().ok()).unwrap_or(0);
    let mut report = if args.append && ws.exists(REPORT_FILE) {
        EvalReport::from_text(&fs::read_to_string(ws.path(REPORT_FILE))?)?
    } else {
        EvalReport::default()
    };
    let dif = load_dense(ws, TEST_SCORES_FILE, "diffuse")?;
    report.push("diffusion", run, top5_accuracy(&dif, &truth)?);
    if ws.exists(LOGREG_TEST_FILE) {
        let lr = load_dense(ws, LOGREG_TEST_FILE, "logreg")?;
        report.push("logreg", run, top5_accuracy(&lr, &truth)?);
        let grid = if args.fusion_grid.is_empty() { default_fusion_grid() } else { args.fusion_grid.clone() };
        let a = if ws.exists(VAL_SCORES_FILE) && ws.exists(LOGREG_VAL_FILE) {
            let vd = load_dense(ws, VAL_SCORES_FILE, "diffuse")?;
            let vl = load_dense(ws, LOGREG_VAL_FILE, "logreg")?;
            let vy = roles.labels_of(&roles.rows_with(Role::Validation))?;
            let mut best = (f64::NEG_INFINITY, grid[0]);
            for &a in &grid {
                let acc = top5_accuracy(&fuse(&vd, &vl, a)?, &vy)?;
                if acc > best.0 {
                    best = (acc, a);
                }
            }
            best.1
        } else {
            grid[0]
        };
        report.push("fused", run, top5_accuracy(&fuse(&dif, &lr, a)?, &truth)?);
        report.curves.push((format!("fusion_weight run {run}"), vec![a]));
    }
    if ws.exists(FILL_FILE) {
        let stats = FillStats::from_text(&fs::read_to_string(ws.path(FILL_FILE))?)?;
        let acc: Vec<f64> = stats.records.iter().filter_map(|r| r.accuracy).collect();
        if !acc.is_empty() {
            report.curves.push((format!("validation accuracy run {run}"), acc));
        }
    }
    fs::write(ws.path(REPORT_FILE), report.to_text())?;
    ws.record("report", REPORT_FILE, "evaluate")?;
    Ok(report)
}

/// Print the strongest-contributor path of a (node, class) entry.
#[derive(Args, Clone, Debug)]
pub struct PathsArgs {
    #[arg(long)]
    pub node: usize,
    #[arg(long)]
    pub class: usize,
    /// Start iteration (defaults to the last recorded one).
    #[arg(long)]
    pub iteration: Option<usize>,
}

pub fn paths(ws: &Workspace, args: &PathsArgs) -> Result<String> {
    let trace = Trace::load(ws.require(TRACE_FILE, "diffuse --trace-classes")?)?;
    let n_seeds = if ws.exists(PARTITION_FILE) { load_partition(ws)?.n_seeds() } else { 0 };
    let it = args.iteration.unwrap_or(trace.n_iterations());
    let mut out = String::new();
    match trace.backtrack_at(it, args.node, args.class)? {
        Backtrack::NotReached => out.push_str("not reached\n"),
        Backtrack::Path(path) => {
            out.push_str("# iteration\tnode\tkind\n");
            for (t, node) in path {
                let kind = if node < n_seeds { "seed" } else { "background" };
                let _ = writeln!(out, "{t}\t{node}\t{kind}");
            }
        }
    }
    Ok(out)
}
