//! Low-shot benchmark on a synthetic Gaussian-mixture dataset.
//!
//! For each number of seeds per class this draws five seed sets, then
//! reports test top-5 accuracy (mean ± std over the draws) of diffusion
//! without background, diffusion over in-domain background, logistic
//! regression, and their late fusion.
//!
//! ```text
//! cargo run --release --example lowshot_benchmark [spec.toml]
//! ```

use std::time::Instant;

use lowshot::experiment::{lowshot_run, summarize_runs, LowShotSetup};
use lowshot::features::{apply_pca, fit_pca};
use lowshot::matrix::l2_normalize_rows;
use lowshot::rng;
use lowshot::synth::{generate, BackgroundMode, Role, SynthSpec};

const RUNS: u64 = 5;

fn main() -> lowshot::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/desk.toml").to_string());
    let spec = SynthSpec::from_toml(&std::fs::read_to_string(&path)?)?;
    let data = generate(&spec)?;
    let background = data.features.select_rows(&data.roles.rows_with(Role::Background));
    let pca = fit_pca(&background, spec.dim)?;
    let features = l2_normalize_rows(&apply_pca(&pca, &data.features)?);
    let setup = LowShotSetup::default();

    println!("{:>3}  {:>14}  {:>14}  {:>14}  {:>14}  {:>4}", "n", "none", "diffusion", "logreg", "fused", "a");
    let start = Instant::now();
    for n in [1, 2, 5, 10, 20].into_iter().filter(|&n| n <= spec.counts.pool) {
        let mut in_domain = Vec::new();
        let mut no_background = Vec::new();
        for run in 0..RUNS {
            let draw = rng::stream_seed(spec.seed, rng::SEED_DRAWS, &[run]);
            in_domain.push(lowshot_run(&features, &data.roles, spec.n_classes, n, draw, BackgroundMode::InDomain, &setup)?);
            no_background.push(lowshot_run(&features, &data.roles, spec.n_classes, n, draw, BackgroundMode::None, &setup)?);
        }
        let s = summarize_runs(&in_domain, &data.roles, &setup.fusion_grid)?;
        let none = summarize_runs(&no_background, &data.roles, &setup.fusion_grid)?;
        println!(
            "{n:>3}  {:>14}  {:>14}  {:>14}  {:>14}  {:>4.1}",
            none.diffusion.to_string(),
            s.diffusion.to_string(),
            s.logreg.to_string(),
            s.fused.to_string(),
            s.a
        );
    }
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
