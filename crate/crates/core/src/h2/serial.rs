//! JSON form of an [`H2Matrix`].
//!
//! Schema (all matrices row-major):
//!
//! ```text
//! {
//!   "row_tree":  { "nodes": [...], "perm": [...], "dim": d, "points": [...] },
//!   "col_tree":  { ... },
//!   "blocks":    [ { "row", "col", "children", "parent", "kind" }, ... ],
//!   "row_basis": { "ranks": [...], "leaf": [mat|null], "transfer": [mat|null] },
//!   "col_basis": { ... },
//!   "coupling":  [mat|null, ...],
//!   "nearfield": [mat|null, ...]
//! }
//! mat = { "rows": r, "cols": c, "data": [r*c values] }
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::basis::ClusterBasis;
use super::matrix::H2Matrix;
use crate::dense::Matrix;
use crate::error::{H2Error, Result};
use crate::trees::{Block, BlockTree, ClusterTree};

#[derive(Serialize, Deserialize)]
struct MatJson {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatJson {
    fn from_matrix(m: &Matrix) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    fn into_matrix(self) -> Result<Matrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(H2Error::DimensionMismatch { expected: self.rows * self.cols, got: self.data.len() });
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct BasisJson {
    ranks: Vec<usize>,
    leaf: Vec<Option<MatJson>>,
    transfer: Vec<Option<MatJson>>,
}

#[derive(Serialize, Deserialize)]
struct H2Json {
    row_tree: ClusterTree,
    col_tree: ClusterTree,
    blocks: Vec<Block>,
    row_basis: BasisJson,
    col_basis: BasisJson,
    coupling: Vec<Option<MatJson>>,
    nearfield: Vec<Option<MatJson>>,
}

fn mats_out(v: &[Option<Matrix>]) -> Vec<Option<MatJson>> {
    v.iter().map(|m| m.as_ref().map(MatJson::from_matrix)).collect()
}

fn mats_in(v: Vec<Option<MatJson>>) -> Result<Vec<Option<Matrix>>> {
    v.into_iter().map(|m| m.map(MatJson::into_matrix).transpose()).collect()
}

fn basis_out(b: &ClusterBasis) -> BasisJson {
    BasisJson { ranks: b.ranks.clone(), leaf: mats_out(&b.leaf), transfer: mats_out(&b.transfer) }
}

fn basis_in(tree: Arc<ClusterTree>, b: BasisJson) -> Result<ClusterBasis> {
    ClusterBasis::new(tree, b.ranks, mats_in(b.leaf)?, mats_in(b.transfer)?)
}

impl H2Matrix {
    pub fn to_json(&self) -> Result<String> {
        let doc = H2Json {
            row_tree: (*self.blocks.rows).clone(),
            col_tree: (*self.blocks.cols).clone(),
            blocks: self.blocks.nodes.clone(),
            row_basis: basis_out(&self.row_basis),
            col_basis: basis_out(&self.col_basis),
            coupling: mats_out(&self.coupling),
            nearfield: mats_out(&self.nearfield),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: H2Json = serde_json::from_str(s)?;
        let rows = Arc::new(doc.row_tree);
        let cols = Arc::new(doc.col_tree);
        let blocks = Arc::new(BlockTree::from_nodes(rows.clone(), cols.clone(), doc.blocks));
        let row_basis = basis_in(rows, doc.row_basis)?;
        let col_basis = basis_in(cols, doc.col_basis)?;
        H2Matrix::new(blocks, row_basis, col_basis, mats_in(doc.coupling)?, mats_in(doc.nearfield)?)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let tree = Arc::new(ClusterTree::build(&pts, 1, 4).unwrap());
        let bt = Arc::new(BlockTree::build(tree.clone(), tree, 2.0).unwrap());
        let g = H2Matrix::random(bt, 2, &mut rng);
        let text = g.to_json().unwrap();
        let back = H2Matrix::from_json(&text).unwrap();
        assert_eq!(g.to_dense().unwrap(), back.to_dense().unwrap());
        assert!(H2Matrix::from_json("{}").is_err());
    }
}
