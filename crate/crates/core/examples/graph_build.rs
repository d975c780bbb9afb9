//! Graph construction: the off-line background block, the on-line
//! completion with seeds, and the symmetric normalization.

use lowshot::graph::{background_block, symmetrize_and_normalize, BlockLists, EdgeWeighting, GraphBundle, SearchBackend};
use lowshot::matrix::{FeatureMatrix, SparseRowMatrix};

fn print_rows(name: &str, m: &SparseRowMatrix) {
    println!("{name}:");
    for i in 0..m.n_rows() {
        let (cols, vals) = m.row(i);
        let entries: Vec<String> = cols.iter().zip(vals).map(|(c, v)| format!("{c}:{v:.3}")).collect();
        println!("  {i}: {{{}}}", entries.join(", "));
    }
}

fn main() -> lowshot::Result<()> {
    // path graph 0 -> 1, 2 -> 1 with a double weight on the second edge
    let w0 = SparseRowMatrix::from_rows(3, vec![vec![(1, 1.0)], vec![], vec![(1, 2.0)]])?;
    print_rows("W0", &w0);
    print_rows("W = D⁻¹(W0 + W0ᵀ)", &symmetrize_and_normalize(&w0)?);

    let seeds = FeatureMatrix::from_rows(&[[0.0f32, 0.0], [4.0, 4.0]])?;
    let background = FeatureMatrix::from_rows(&[
        [0.5f32, 0.0],
        [0.0, 0.6],
        [1.0, 1.0],
        [3.5, 4.0],
        [4.0, 3.2],
        [3.0, 3.0],
    ])?;
    let test = FeatureMatrix::from_rows(&[[0.2f32, 0.2], [3.8, 3.8]])?;
    let k = 2;

    let bb = background_block(&background, k, SearchBackend::Exact)?;
    let blocks = BlockLists::compute(&seeds, &background, k, Some(bb), SearchBackend::Exact)?;
    let staged = GraphBundle::from_blocks(&blocks, &seeds, &background, &test, k, EdgeWeighting::Constant)?;
    let one_shot = GraphBundle::build(&seeds, &background, &test, k, EdgeWeighting::Constant, SearchBackend::Exact)?;
    println!("staged build equals one-shot build: {}", staged.w == one_shot.w);
    print_rows("W over seeds then background", &staged.w);

    for scheme in ["constant", "gaussian:1.0", "meaningful:0.5"] {
        let weighting: EdgeWeighting = scheme.parse()?;
        let g = GraphBundle::build(&seeds, &background, &test, k, weighting, SearchBackend::Exact)?;
        let (cols, vals) = g.w0.row(0);
        println!("{weighting:>16}: seed 0 out-edges {cols:?} weights {vals:?}");
    }
    Ok(())
}
