//! H²-matrices with an adaptive multiplication of linear complexity.
//!
//! The product `X·Y` of two H²-matrices is computed in two phases:
//!
//! 1. [`induced`]: the induced row and column cluster bases of the product
//!    are compressed (with the bases of the factors kept exactly), and the
//!    product is assembled on the refined product block tree.
//! 2. [`coarsen`]: the intermediate matrix is re-compressed onto a coarser,
//!    prescribed block tree with new adaptive bases and block-relative error
//!    control.
//!
//! Supporting modules provide dense kernels ([`dense`]), cluster and block
//! trees ([`trees`]), the H²-matrix container ([`h2`]), basis and total
//! weights ([`weights`]), interpolation-based model problems ([`model`]) and
//! the benchmark harness ([`bench`]).

pub mod bench;
pub mod coarsen;
pub mod dense;
pub mod error;
pub mod h2;
pub mod induced;
pub mod model;
pub mod trees;
mod util;
pub mod weights;

pub use dense::Matrix;
pub use error::{H2Error, Result};
pub use h2::{ClusterBasis, H2Matrix};
pub use trees::{BlockKind, BlockTree, ClusterTree};
