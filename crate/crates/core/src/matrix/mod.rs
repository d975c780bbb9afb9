//! Dense and sparse numeric containers.

mod dense;
pub(crate) mod format;
mod sparse;

pub use dense::{l2_normalize_rows, DenseBlock, FeatureMatrix};
pub use format::peek_magic;
pub use sparse::{spmm, SparseRowMatrix};
