//! PCA reduction fitted on unlabeled rows, followed by L2 normalization.

use lowshot::features::{apply_pca, fit_pca};
use lowshot::matrix::l2_normalize_rows;
use lowshot::synth::{generate, Role, SynthSpec};

const SPEC: &str = r#"
seed = 7
dim = 64
n_classes = 5
intrinsic_dim = 8
noise = 0.05

[counts]
pool = 10
background = 200
validation = 0
test = 20
"#;

fn main() -> lowshot::Result<()> {
    let spec = SynthSpec::from_toml(SPEC)?;
    let data = generate(&spec)?;
    let background = data.features.select_rows(&data.roles.rows_with(Role::Background));

    let pca = fit_pca(&background, 16)?;
    let total: f64 = pca.explained_variance().iter().sum();
    let mut cumulative = 0.0;
    for (i, v) in pca.explained_variance().iter().enumerate().take(10) {
        cumulative += v;
        println!("component {i:2}: variance {v:8.4}  cumulative {:5.1}%", 100.0 * cumulative / total);
    }

    let reduced = l2_normalize_rows(&apply_pca(&pca, &data.features)?);
    let norm: f32 = reduced.row(0).iter().map(|v| v * v).sum::<f32>().sqrt();
    println!("{} rows reduced from {} to {} dims; first row norm {norm:.6}", reduced.n_rows(), pca.d_in(), pca.d_out());
    Ok(())
}
