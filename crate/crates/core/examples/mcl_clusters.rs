//! Markov-cluster style iteration on the graph operator itself.

use lowshot::diffusion::{connected_components, mcl_iterate_with, MclConfig};
use lowshot::graph::symmetrize_and_normalize;
use lowshot::matrix::SparseRowMatrix;

fn main() -> lowshot::Result<()> {
    // two triangles joined by a single weak bridge 2 - 3
    let mut rows = vec![Vec::new(); 6];
    for (a, b, w) in [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0), (2, 3, 0.1)] {
        rows[a].push((b as u32, w));
        rows[a].push((a as u32, 1.0));
    }
    for r in &mut rows {
        r.sort_by_key(|e| e.0);
        r.dedup_by_key(|e| e.0);
    }
    let w = symmetrize_and_normalize(&SparseRowMatrix::from_rows(6, rows)?)?;
    println!("input components: {:?}", connected_components(&w));

    for r in [1.5, 2.0] {
        let out = mcl_iterate_with(&w, &MclConfig::new(r, 12))?;
        println!("r = {r}: {} nonzeros, components {:?}", out.nnz(), connected_components(&out));
    }
    Ok(())
}
