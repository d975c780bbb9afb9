//! The command pipeline driven in-process: synthesize, preprocess, build
//! the graph in its off-line and on-line halves, diffuse, evaluate, then
//! replay the manifest into a fresh directory and compare hashes.

use lowshot::pipeline::cli::run;
use lowshot::pipeline::Workspace;

fn lowshot(dir: &str, args: &[&str]) {
    let mut argv = vec!["lowshot", "--dir", dir];
    argv.extend_from_slice(args);
    let code = run(argv);
    assert_eq!(code, 0, "lowshot {} failed", args.join(" "));
}

fn main() -> lowshot::Result<()> {
    let root = tempfile::tempdir()?;
    let first = root.path().join("first");
    let dir = first.to_str().unwrap();
    let spec = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/desk.toml");

    lowshot(dir, &["synth", "--spec", spec]);
    lowshot(dir, &["preprocess", "--d-out", "32"]);
    lowshot(dir, &["build-graph", "--background-only", "--k", "10"]);
    lowshot(dir, &["build-graph", "--complete", "--k", "10", "--shots", "2"]);
    lowshot(dir, &["diffuse", "--trace-classes", "0"]);
    lowshot(dir, &["logreg"]);
    lowshot(dir, &["evaluate"]);
    lowshot(dir, &["paths", "--node", "100", "--class", "0"]);

    let replayed = root.path().join("replayed");
    let first_ws = Workspace::open(&first)?;
    let timings = first_ws.timings();
    let original = first_ws.manifest.clone();
    drop(first_ws);
    lowshot(replayed.to_str().unwrap(), &["replay", "--from", dir]);
    let copy = Workspace::open(&replayed)?.manifest.clone();

    for (label, seconds) in timings {
        println!("{label}: {:.1} ms", seconds * 1e3);
    }
    let same = original
        .artifacts
        .iter()
        .all(|(name, a)| copy.artifacts.get(name).is_some_and(|b| b.sha256 == a.sha256));
    println!("{} artifacts, replay reproduces every hash: {same}", original.artifacts.len());
    Ok(())
}
