//! Label-matrix normalizations: column, row, class-prior and the
//! alternating Sinkhorn scaling toward prescribed marginals.

use lowshot::diffusion::{apply_eta, marginal_residuals, sinkhorn_to_tolerance, EtaOperator};
use lowshot::labels::{ClassPrior, LabelMatrix};
use lowshot::matrix::DenseBlock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lowshot::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (rows, classes) = (30, 4);
    let data: Vec<f64> = (0..rows * classes).map(|_| rng.random_range(0.01..1.0)).collect();
    let scores = DenseBlock::new(rows, classes, data)?;
    let labels = LabelMatrix::from_dense(&scores, classes)?;
    let prior = ClassPrior::from_weights(&[4.0, 3.0, 2.0, 1.0])?;

    for op in [
        EtaOperator::ColNorm,
        EtaOperator::RowNorm,
        EtaOperator::ClassPrior(prior.clone()),
        EtaOperator::sinkhorn(prior.clone()),
    ] {
        let (out, _) = apply_eta(&labels, &op)?;
        let dense = out.to_dense();
        let res = marginal_residuals(&dense, prior.probs());
        let col: Vec<String> = dense.column_sums().iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "{:>12}: column sums [{}]  row residual {:.2e}  prior residual {:.2e}",
            op.name(),
            col.join(", "),
            res.row,
            res.col
        );
    }

    let mut m = scores.clone();
    let start = marginal_residuals(&m, prior.probs());
    let (res, passes) = sinkhorn_to_tolerance(&mut m, prior.probs(), 1e-9, 1000);
    println!(
        "sinkhorn to 1e-9: {passes} passes, residual {:.2e} -> {:.2e}",
        start.max(),
        res.max()
    );
    Ok(())
}
