//! Cluster trees, block trees, product block trees and column trees.

mod block;
mod cluster;
mod column;
mod product;

pub use block::{Block, BlockKind, BlockTree};
pub use cluster::{admissible, BBox, Cluster, ClusterTree};
pub use column::{build_column_tree, ColumnTree};
pub use product::build_product_block_tree;
