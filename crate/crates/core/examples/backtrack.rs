//! Tracing which neighbor carried a label into each node, then walking
//! those links back to the seed it came from.

use lowshot::diffusion::{diffuse, init_labels, Backtrack, DiffusionConfig};
use lowshot::graph::{EdgeWeighting, GraphBundle, SearchBackend};
use lowshot::labels::DatasetPartition;
use lowshot::matrix::FeatureMatrix;

fn main() -> lowshot::Result<()> {
    // two seeds at the ends of a line of background points
    let seeds = FeatureMatrix::from_rows(&[[0.0f32], [10.0]])?;
    let background = FeatureMatrix::from_rows(&(1..10).map(|x| [x as f32]).collect::<Vec<_>>())?;
    let test = FeatureMatrix::zeros(0, 1);
    let graph = GraphBundle::build(&seeds, &background, &test, 2, EdgeWeighting::Constant, SearchBackend::Exact)?;

    let part = DatasetPartition::new(vec![(0, 0), (1, 1)], (2..11).collect(), vec![])?;
    let l0 = init_labels(&part, 2, 2)?;
    let cfg = DiffusionConfig::default().with_iters(6).with_trace(vec![0, 1]);
    let run = diffuse(&graph, &l0, &cfg, None)?;

    for node in [2, 4, 6, 10] {
        for class in [0, 1] {
            match run.trace.backtrack(node, class)? {
                Backtrack::NotReached => println!("node {node:2} class {class}: not reached"),
                Backtrack::Path(path) => {
                    let hops: Vec<String> = path.iter().map(|(t, n)| format!("{n}@{t}")).collect();
                    println!("node {node:2} class {class}: {}", hops.join(" <- "));
                }
            }
        }
    }
    Ok(())
}
