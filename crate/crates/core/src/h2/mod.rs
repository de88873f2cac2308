//! Nested cluster bases and the H²-matrix container.

mod basis;
mod matrix;
mod serial;
mod view;

pub use basis::{cluster_basis_product, orthogonalize_basis, BasisProduct, ClusterBasis};
pub use matrix::{permute_dense, H2Matrix, DENSE_LIMIT};
pub use view::MatrixView;
