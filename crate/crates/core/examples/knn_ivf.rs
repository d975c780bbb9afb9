//! Exact versus inverted-file k-NN search and the recall/probe trade-off.

use std::time::Instant;

use lowshot::knn::{brute_force_knn, build_ivf, ivf_search, IvfParams};
use lowshot::matrix::l2_normalize_rows;
use lowshot::synth::{generate, Role, SynthSpec};

const SPEC: &str = r#"
seed = 3
dim = 32
n_classes = 8
mean_scale = 1.0
class_spread = 0.4

[counts]
pool = 0
background = 2500
validation = 0
test = 50
"#;

fn main() -> lowshot::Result<()> {
    let data = generate(&SynthSpec::from_toml(SPEC)?)?;
    let features = l2_normalize_rows(&data.features);
    let corpus = features.select_rows(&data.roles.rows_with(Role::Background));
    let queries = features.select_rows(&data.roles.rows_with(Role::Test));
    let k = 30;

    let t = Instant::now();
    let exact = brute_force_knn(&queries, &corpus, k)?;
    println!("brute force: {} queries against {} points in {:.1?}", queries.n_rows(), corpus.n_rows(), t.elapsed());

    let n_lists = 64;
    let t = Instant::now();
    let index = build_ivf(&corpus, &IvfParams::new(n_lists).with_seed(11))?;
    println!("ivf with {n_lists} lists trained in {:.1?}", t.elapsed());
    for n_probe in [1, 4, 8, index.default_n_probe(), n_lists] {
        let t = Instant::now();
        let approx = ivf_search(&index, &queries, k, n_probe)?;
        println!(
            "n_probe {n_probe:3}: recall@{k} {:.4} in {:.1?}",
            approx.recall_against(&exact),
            t.elapsed()
        );
    }
    Ok(())
}
