use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lowshot::classify::{fuse, top5_accuracy, EvalReport};
use lowshot::diffusion::FillStats;
use lowshot::graph::{symmetrize_and_normalize, EdgeWeighting, GraphBundle, GraphMeta};
use lowshot::knn::NeighborList;
use lowshot::labels::DatasetPartition;
use lowshot::matrix::{DenseBlock, FeatureMatrix, SparseRowMatrix};
use lowshot::pipeline::{sha256_file, Workspace};
use lowshot::synth::{Role, RowRoles};

const SMALL: &str = r#"
seed = 4
dim = 8
n_classes = 4
mean_scale = 1.0
class_spread = 0.5

[counts]
pool = 5
background = 30
validation = 5
test = 10
"#;

fn lowshot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowshot"))
        .arg("--dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lowshot(dir, args);
    assert!(
        out.status.success(),
        "lowshot {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// `(exit code, category)` of a failing invocation.
fn fails(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = lowshot(dir, args);
    assert!(!out.status.success(), "lowshot {} unexpectedly succeeded", args.join(" "));
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {err:?}");
    let fields: Vec<&str> = lines[0].split('\t').collect();
    assert_eq!(fields.len(), 3, "malformed error line {:?}", lines[0]);
    assert_eq!(fields[0], "error");
    (out.status.code().unwrap(), fields[1].to_string())
}

fn small_pipeline(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let spec = dir.join("in.toml");
    fs::write(&spec, SMALL).unwrap();
    ok(dir, &["synth", "--spec", spec.to_str().unwrap()]);
    ok(dir, &["preprocess"]);
    ok(dir, &["build-graph", "--k", "5", "--shots", "2"]);
}

fn load_dense(path: &Path) -> DenseBlock {
    DenseBlock::from_feature_matrix(&FeatureMatrix::load(path).unwrap())
}

/// Workspace holding the 3-node path graph 0 - 1 - 2 with edge weights 1
/// and 2, a class-0 seed at node 0 and two classes.
fn three_node(dir: &Path) {
    let w0 = SparseRowMatrix::from_rows(3, vec![vec![(1, 1.0)], vec![], vec![(1, 2.0)]]).unwrap();
    let bundle = GraphBundle {
        w: symmetrize_and_normalize(&w0).unwrap(),
        w0,
        test_edges: NeighborList::empty(1),
        meta: GraphMeta {
            n_seeds: 1,
            n_background: 2,
            k: 1,
            weighting: EdgeWeighting::Constant,
        },
    };
    let mut ws = Workspace::open(dir).unwrap();
    bundle.save(&ws.path("graph")).unwrap();
    let part = DatasetPartition::new(vec![(0, 0)], vec![1, 2], vec![]).unwrap();
    fs::write(ws.path("partition.txt"), part.to_text()).unwrap();
    ws.record("partition", "partition.txt", "test").unwrap();
    ws.set_param("n_classes", 2);
    ws.save().unwrap();
}

#[test]
fn eta_none_one_iteration_on_three_nodes() {
    let dir = tempfile::tempdir().unwrap();
    three_node(dir.path());
    ok(dir.path(), &["diffuse", "--eta", "none", "--iters", "1"]);
    let l = load_dense(&dir.path().join("labels.fmat"));
    assert_eq!(l.column(0), vec![0.0, (1.0f64 / 3.0) as f32 as f64, 0.0]);
    assert_eq!(l.column(1), vec![0.0; 3]);
}

#[test]
fn three_node_backtrack_listing() {
    let dir = tempfile::tempdir().unwrap();
    three_node(dir.path());
    ok(dir.path(), &["diffuse", "--eta", "none", "--iters", "2", "--trace-classes", "0"]);
    let out = ok(dir.path(), &["paths", "--node", "2", "--class", "0"]);
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows, vec!["2\t2\tbackground", "1\t1\tbackground", "0\t0\tseed"]);

    let seed = ok(dir.path(), &["paths", "--node", "0", "--class", "0", "--iteration", "0"]);
    assert_eq!(seed.lines().filter(|l| !l.starts_with('#')).count(), 1);
    assert_eq!(ok(dir.path(), &["paths", "--node", "2", "--class", "0", "--iteration", "1"]), "not reached\n");
    assert_eq!(fails(dir.path(), &["paths", "--node", "2", "--class", "1"]).1, "parameter");
}

#[test]
fn reset_seeds_keeps_seed_rows_one_hot() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    ok(dir.path(), &["diffuse", "--eta", "none", "--iters", "4", "--reset-seeds"]);
    let l = load_dense(&dir.path().join("labels.fmat"));
    let part = DatasetPartition::from_text(&fs::read_to_string(dir.path().join("partition.txt")).unwrap()).unwrap();
    for (i, &(_, c)) in part.seeds().iter().enumerate() {
        let mut expect = vec![0.0; 4];
        expect[c] = 1.0;
        assert_eq!(l.row(i), expect.as_slice());
    }
}

#[test]
fn corrupted_magic_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let path = dir.path().join("features.fmat");
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, bytes).unwrap();
    let (code, category) = fails(dir.path(), &["build-graph", "--k", "5"]);
    assert_ne!(code, 0);
    assert_eq!(category, "format");
}

#[test]
fn staged_graph_equals_one_shot() {
    let root = tempfile::tempdir().unwrap();
    let full = root.path().join("full");
    small_pipeline(&full);
    let staged = root.path().join("staged");
    fs::create_dir_all(&staged).unwrap();
    fs::write(staged.join("in.toml"), SMALL).unwrap();
    ok(&staged, &["synth", "--spec", staged.join("in.toml").to_str().unwrap()]);
    ok(&staged, &["preprocess"]);
    ok(&staged, &["build-graph", "--background-only", "--k", "5"]);
    ok(&staged, &["build-graph", "--complete", "--k", "5", "--shots", "2"]);
    for f in ["graph/w0.sprm", "graph/w.sprm", "graph/test_edges.knnl", "partition.txt", "val_edges.knnl"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(staged.join(f)).unwrap(), "{f} differs");
    }
    let timings = fs::read_to_string(staged.join("timings.txt")).unwrap();
    assert!(timings.contains("timing: background graph\t"));
    assert!(timings.contains("timing: graph completion\t"));
}

#[test]
fn parameter_errors() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    assert_eq!(fails(dir.path(), &["build-graph", "--k", "1000"]).1, "parameter");
    assert_eq!(fails(dir.path(), &["build-graph", "--complete", "--k", "3"]).1, "parameter");
    assert_eq!(fails(dir.path(), &["diffuse", "--eta", "rownorm", "--batch-size", "2"]).1, "parameter");
    assert_eq!(fails(dir.path(), &["diffuse", "--gamma", "3"]).1, "parameter");
    let (code, category) = fails(dir.path(), &["diffuse", "--eta", "unknown"]);
    assert_eq!((code, category.as_str()), (2, "usage"));
}

#[test]
fn missing_prerequisite_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fails(dir.path(), &["diffuse"]).1, "data");
}

#[test]
fn synth_and_preprocess_are_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    small_pipeline(&a);
    small_pipeline(&b);
    for f in ["raw.fmat", "rows.txt", "features.fmat", "pca.pcam"] {
        assert_eq!(sha256_file(&a.join(f)).unwrap(), sha256_file(&b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn identity_preprocessing_keeps_distance_order() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    ok(dir.path(), &["preprocess", "--pca", "identity", "--no-normalize"]);
    let raw = FeatureMatrix::load(dir.path().join("raw.fmat")).unwrap();
    let out = FeatureMatrix::load(dir.path().join("features.fmat")).unwrap();
    let d = |m: &FeatureMatrix, i: usize, j: usize| -> f64 {
        m.row(i).iter().zip(m.row(j)).map(|(a, b)| ((a - b) as f64).powi(2)).sum()
    };
    let mut pairs: Vec<(usize, usize)> = (0..20).flat_map(|i| (i + 1..20).map(move |j| (i, j))).collect();
    pairs.sort_by(|p, q| d(&raw, p.0, p.1).total_cmp(&d(&raw, q.0, q.1)));
    let mut by_out = pairs.clone();
    by_out.sort_by(|p, q| d(&out, p.0, p.1).total_cmp(&d(&out, q.0, q.1)));
    assert_eq!(pairs, by_out);
}

#[test]
fn evaluate_matches_in_process_scores() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    ok(dir.path(), &["diffuse"]);
    ok(dir.path(), &["logreg"]);
    let stdout = ok(dir.path(), &["evaluate", "--fusion-grid", "0,1"]);
    assert!(stdout.contains("diffusion\t") && stdout.contains("fused\t"));

    let p = dir.path();
    let roles = RowRoles::from_text(&fs::read_to_string(p.join("rows.txt")).unwrap()).unwrap();
    let truth = roles.labels_of(&roles.rows_with(Role::Test)).unwrap();
    let dif = load_dense(&p.join("test_scores.fmat"));
    let lr = load_dense(&p.join("logreg_test.fmat"));
    let report = EvalReport::from_text(&fs::read_to_string(p.join("report.txt")).unwrap()).unwrap();
    let get = |c: &str| report.records.iter().find(|r| r.config == c).unwrap().accuracy;
    assert!((get("diffusion") - top5_accuracy(&dif, &truth).unwrap()).abs() < 1e-6);
    assert!((get("logreg") - top5_accuracy(&lr, &truth).unwrap()).abs() < 1e-6);
    let a = report.curves.iter().find(|c| c.0.starts_with("fusion_weight")).unwrap().1[0];
    assert!(a == 0.0 || a == 1.0);
    let single = if a == 0.0 { get("diffusion") } else { get("logreg") };
    assert!((get("fused") - single).abs() < 1e-6);
    assert!((get("fused") - top5_accuracy(&fuse(&dif, &lr, a).unwrap(), &truth).unwrap()).abs() < 1e-6);

    ok(p, &["evaluate", "--append"]);
    let appended = EvalReport::from_text(&fs::read_to_string(p.join("report.txt")).unwrap()).unwrap();
    assert_eq!(appended.records.len(), 2 * report.records.len());
}

#[test]
fn fill_statistics_and_early_stopping_are_written() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    ok(dir.path(), &["diffuse", "--max-iters", "8"]);
    let stats = FillStats::from_text(&fs::read_to_string(dir.path().join("fill.txt")).unwrap()).unwrap();
    assert_eq!(stats.records.len(), 9);
    assert!(stats.fill_rates().windows(2).all(|w| w[1] >= w[0]));
    let ws = Workspace::open(dir.path()).unwrap();
    let best: usize = ws.param("n_iters").unwrap().parse().unwrap();
    assert!((1..=8).contains(&best));
    assert!(fs::read_to_string(dir.path().join("timings.txt")).unwrap().contains("timing: diffusion\t"));
}

#[test]
fn imported_descriptors_replay() {
    let root = tempfile::tempdir().unwrap();
    let src = root.path().join("src");
    small_pipeline(&src);
    let first = root.path().join("first");
    fs::create_dir_all(&first).unwrap();
    ok(
        &first,
        &[
            "preprocess",
            "--input",
            src.join("raw.fmat").to_str().unwrap(),
            "--rows",
            src.join("rows.txt").to_str().unwrap(),
            "--seed",
            "17",
            "--d-out",
            "4",
        ],
    );
    ok(&first, &["build-graph", "--k", "4", "--shots", "3", "--weighting", "meaningful:0.5"]);
    ok(&first, &["diffuse", "--eta", "class-prior", "--prior", "1,2,3,4", "--gamma", "1.5"]);
    let second = root.path().join("second");
    ok(&second, &["replay", "--from", first.to_str().unwrap()]);
    for f in ["features.fmat", "graph/w.sprm", "labels.fmat", "test_scores.fmat", "manifest.txt"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    small_pipeline(&a);
    small_pipeline(&b);
    ok(&a, &["--threads", "1", "diffuse"]);
    ok(&b, &["--threads", "3", "diffuse"]);
    assert_eq!(fs::read(a.join("labels.fmat")).unwrap(), fs::read(b.join("labels.fmat")).unwrap());
    assert_eq!(fails(&a, &["--threads", "0", "diffuse"]).1, "parameter");
}
