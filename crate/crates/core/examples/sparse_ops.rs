//! Sparse-times-dense products and the binary matrix formats.
//!
//! Run with `cargo run --example sparse_ops`.

use lowshot::matrix::{peek_magic, spmm, DenseBlock, SparseRowMatrix};

fn main() -> lowshot::Result<()> {
    // a 4-node cycle with unequal weights
    let w = SparseRowMatrix::from_rows(
        4,
        vec![
            vec![(1, 0.5), (3, 0.5)],
            vec![(0, 0.25), (2, 0.75)],
            vec![(1, 1.0)],
            vec![(0, 0.4), (2, 0.6)],
        ],
    )?;
    let x = DenseBlock::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])?;
    let y = spmm(&w, &x)?;
    println!("W has {} nonzeros, row sums {:?}", w.nnz(), w.row_sums());
    for i in 0..y.n_rows() {
        println!("row {i}: {:?}", y.row(i));
    }

    let wt = w.transpose();
    let sym = w.add(&wt)?;
    println!("W + Wᵀ symmetric support: {}", sym.has_symmetric_support());

    let dir = std::env::temp_dir().join(format!("lowshot-sparse-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("w.sprm");
    w.save(&path)?;
    let back = SparseRowMatrix::load(&path)?;
    let magic = peek_magic(&path)?;
    println!("saved {} ({}), round trip equal: {}", path.display(), String::from_utf8_lossy(&magic), back == w);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
