use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cluster::{admissible, ClusterTree};
use crate::error::{H2Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Leaf stored in factorized form `V S Wᵀ`.
    Admissible,
    /// Leaf stored as a dense matrix.
    Inadmissible,
    /// Subdivided block.
    Internal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Block {
    pub row: usize,
    pub col: usize,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    pub kind: BlockKind,
}

impl Block {
    pub fn is_leaf(&self) -> bool {
        self.kind != BlockKind::Internal
    }
}

/// Block tree over `rows × cols`.
///
/// Block ids are assigned in preorder (parents before children), which also
/// fixes every iteration order used by the algorithms.
#[derive(Clone, Debug)]
pub struct BlockTree {
    pub rows: Arc<ClusterTree>,
    pub cols: Arc<ClusterTree>,
    pub nodes: Vec<Block>,
    index: HashMap<(usize, usize), usize>,
    by_row: Vec<Vec<usize>>,
    by_col: Vec<Vec<usize>>,
}

impl BlockTree {
    /// Standard block tree: admissible pairs become admissible leaves, pairs
    /// of leaf clusters inadmissible leaves, everything else is subdivided
    /// into the products of the children (a leaf cluster is kept as is).
    pub fn build(rows: Arc<ClusterTree>, cols: Arc<ClusterTree>, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(H2Error::InvalidInput(format!("eta must be positive, got {eta}")));
        }
        if rows.dim != cols.dim {
            return Err(H2Error::DimensionMismatch { expected: rows.dim, got: cols.dim });
        }
        let mut nodes = Vec::new();
        build_rec(&rows, &cols, eta, rows.root(), cols.root(), None, &mut nodes);
        Ok(Self::from_nodes(rows, cols, nodes))
    }

    /// Assemble a tree from nodes given in preorder.
    pub fn from_nodes(rows: Arc<ClusterTree>, cols: Arc<ClusterTree>, nodes: Vec<Block>) -> Self {
        let mut index = HashMap::with_capacity(nodes.len());
        let mut by_row = vec![Vec::new(); rows.len()];
        let mut by_col = vec![Vec::new(); cols.len()];
        for (b, node) in nodes.iter().enumerate() {
            index.insert((node.row, node.col), b);
            by_row[node.row].push(b);
            by_col[node.col].push(b);
        }
        Self { rows, cols, nodes, index, by_row, by_col }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, b: usize) -> &Block {
        &self.nodes[b]
    }

    pub fn kind(&self, b: usize) -> BlockKind {
        self.nodes[b].kind
    }

    pub fn children(&self, b: usize) -> &[usize] {
        &self.nodes[b].children
    }

    /// Id of the block `(t, s)`, if present.
    pub fn find(&self, t: usize, s: usize) -> Option<usize> {
        self.index.get(&(t, s)).copied()
    }

    /// Blocks with row cluster `t`, in preorder.
    pub fn row_blocks(&self, t: usize) -> &[usize] {
        &self.by_row[t]
    }

    /// Blocks with column cluster `s`, in preorder.
    pub fn col_blocks(&self, s: usize) -> &[usize] {
        &self.by_col[s]
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&b| self.nodes[b].is_leaf())
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.nodes.iter().filter(|b| b.kind == kind).count()
    }

    /// Mirror image over `cols × rows`; block ids are preserved.
    pub fn transpose(&self) -> Self {
        let nodes = self
            .nodes
            .iter()
            .map(|b| Block { row: b.col, col: b.row, ..b.clone() })
            .collect();
        Self::from_nodes(self.cols.clone(), self.rows.clone(), nodes)
    }

    /// Largest number of blocks sharing a row or a column cluster.
    pub fn sparsity(&self) -> usize {
        let r = self.by_row.iter().map(Vec::len).max().unwrap_or(0);
        let c = self.by_col.iter().map(Vec::len).max().unwrap_or(0);
        r.max(c)
    }

    /// Checks that every block pairs clusters of the same level, internal
    /// blocks split both clusters into all child pairs and inadmissible
    /// leaves pair leaf clusters. The multiplication algorithms rely on it.
    pub fn check_level_synchronous(&self) -> Result<()> {
        for (b, node) in self.nodes.iter().enumerate() {
            let (t, s) = (node.row, node.col);
            if self.rows.node(t).level != self.cols.node(s).level {
                return Err(H2Error::Structure(format!(
                    "block {b} pairs clusters of different levels"
                )));
            }
            match node.kind {
                BlockKind::Internal => {
                    let expected = self.rows.children(t).len() * self.cols.children(s).len();
                    if expected == 0 || node.children.len() != expected {
                        return Err(H2Error::Structure(format!(
                            "internal block {b} does not split both clusters"
                        )));
                    }
                }
                BlockKind::Inadmissible => {
                    if !self.rows.is_leaf(t) || !self.cols.is_leaf(s) {
                        return Err(H2Error::Structure(format!(
                            "inadmissible block {b} is not a pair of leaf clusters"
                        )));
                    }
                }
                BlockKind::Admissible => {}
            }
        }
        Ok(())
    }

    /// Number of matrix entries covered by the leaves; equals `n_rows · n_cols`
    /// for a valid tree.
    pub fn leaf_area(&self) -> usize {
        self.leaves()
            .map(|b| self.rows.node(self.nodes[b].row).size() * self.cols.node(self.nodes[b].col).size())
            .sum()
    }

    /// Descendants of `b` (including `b`) in preorder.
    pub fn subtree(&self, b: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![b];
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend(self.nodes[c].children.iter().rev());
        }
        out
    }
}

fn build_rec(
    rows: &ClusterTree,
    cols: &ClusterTree,
    eta: f64,
    t: usize,
    s: usize,
    parent: Option<usize>,
    nodes: &mut Vec<Block>,
) -> usize {
    let id = nodes.len();
    let (ct, cs) = (rows.children(t), cols.children(s));
    let kind = if admissible(&rows.node(t).bbox, &cols.node(s).bbox, eta) {
        BlockKind::Admissible
    } else if ct.is_empty() && cs.is_empty() {
        BlockKind::Inadmissible
    } else {
        BlockKind::Internal
    };
    nodes.push(Block { row: t, col: s, children: Vec::new(), parent, kind });
    if kind != BlockKind::Internal {
        return id;
    }
    let row_children: Vec<usize> = if ct.is_empty() { vec![t] } else { ct.to_vec() };
    let col_children: Vec<usize> = if cs.is_empty() { vec![s] } else { cs.to_vec() };
    let mut children = Vec::with_capacity(row_children.len() * col_children.len());
    for &t1 in &row_children {
        for &s1 in &col_children {
            children.push(build_rec(rows, cols, eta, t1, s1, Some(id), nodes));
        }
    }
    nodes[id].children = children;
    id
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_tree(n: usize, leaf: usize) -> Arc<ClusterTree> {
        let pts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let supports: Vec<_> = (0..n)
            .map(|i| super::super::BBox {
                min: vec![i as f64 / n as f64],
                max: vec![(i + 1) as f64 / n as f64],
            })
            .collect();
        Arc::new(ClusterTree::build_with_supports(&pts, 1, Some(&supports), leaf).unwrap())
    }

    #[test]
    fn single_leaf_block() {
        let tree = line_tree(4, 8);
        let bt = BlockTree::build(tree.clone(), tree, 2.0).unwrap();
        assert_eq!(bt.len(), 1);
        assert_eq!(bt.kind(0), BlockKind::Inadmissible);
    }

    #[test]
    fn far_apart_root_admissible() {
        let a = Arc::new(ClusterTree::build(&[0.0, 0.1, 0.2, 0.3], 1, 1).unwrap());
        let b = Arc::new(ClusterTree::build(&[10.0, 10.1, 10.2, 10.3], 1, 1).unwrap());
        let bt = BlockTree::build(a, b, 1.0).unwrap();
        assert_eq!(bt.len(), 1);
        assert_eq!(bt.kind(0), BlockKind::Admissible);
    }

    /// Brute-force oracle: a leaf pair of positions (i, j) belongs to the
    /// block found by descending greedily through admissibility checks.
    #[test]
    fn depth_three_pattern() {
        let tree = line_tree(8, 1);
        let bt = BlockTree::build(tree.clone(), tree.clone(), 1.0).unwrap();
        bt.check_level_synchronous().unwrap();
        assert_eq!(bt.leaf_area(), 64);
        // Leaf-level: inadmissible exactly for neighbouring or equal cells.
        for b in bt.leaves() {
            let node = bt.node(b);
            let (r, c) = (tree.range(node.row), tree.range(node.col));
            if node.kind == BlockKind::Inadmissible {
                assert_eq!(r.len(), 1);
                assert!(r.start.abs_diff(c.start) <= 1);
            } else {
                // admissible: the intervals are separated
                assert!(r.end < c.start || c.end < r.start);
            }
        }
        assert_eq!(bt.count(BlockKind::Inadmissible), 8 + 2 * 7);
    }

    #[test]
    fn transpose_preserves_ids() {
        let tree = line_tree(32, 2);
        let bt = BlockTree::build(tree.clone(), tree, 2.0).unwrap();
        let tt = bt.transpose();
        for b in 0..bt.len() {
            assert_eq!(bt.node(b).row, tt.node(b).col);
            assert_eq!(tt.find(tt.node(b).row, tt.node(b).col), Some(b));
        }
    }

    #[test]
    fn leaves_tile_the_matrix() {
        let tree = line_tree(100, 3);
        let bt = BlockTree::build(tree.clone(), tree.clone(), 2.0).unwrap();
        let mut cover = vec![0u8; 100 * 100];
        for b in bt.leaves() {
            for i in tree.range(bt.node(b).row) {
                for j in tree.range(bt.node(b).col) {
                    cover[i * 100 + j] += 1;
                }
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
    }
}
