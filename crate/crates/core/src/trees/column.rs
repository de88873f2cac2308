use super::block::{BlockKind, BlockTree};
use crate::dense::Matrix;

/// Column structure of a block `(t, r)` of a product tree.
///
/// Nodes are column clusters. A leaf is admissible if every block of the
/// product tree ending in it is admissible; admissible leaves may carry a
/// coefficient matrix with respect to the column basis, inadmissible leaves
/// carry explicit columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnTree {
    pub cluster: usize,
    pub admissible: bool,
    pub children: Vec<ColumnTree>,
    pub matrix: Option<Matrix>,
}

impl ColumnTree {
    pub fn leaf(cluster: usize, admissible: bool, matrix: Option<Matrix>) -> Self {
        Self { cluster, admissible, children: Vec::new(), matrix }
    }

    pub fn split(cluster: usize, children: Vec<ColumnTree>) -> Self {
        Self { cluster, admissible: false, children, matrix: None }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(ColumnTree::node_count).sum::<usize>()
    }

    /// Leaves from left to right.
    pub fn leaves(&self) -> Vec<&ColumnTree> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a ColumnTree>) {
        if self.is_leaf() {
            out.push(self);
        } else {
            for c in &self.children {
                c.collect_leaves(out);
            }
        }
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut ColumnTree> {
        let mut out = Vec::new();
        fn walk<'a>(node: &'a mut ColumnTree, out: &mut Vec<&'a mut ColumnTree>) {
            if node.children.is_empty() {
                out.push(node);
            } else {
                for c in node.children.iter_mut() {
                    walk(c, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }

    /// Same shape and leaf admissibility, ignoring matrices.
    pub fn same_shape(&self, other: &ColumnTree) -> bool {
        self.cluster == other.cluster
            && self.children.len() == other.children.len()
            && (!self.is_leaf() || self.admissible == other.admissible)
            && self.children.iter().zip(&other.children).all(|(a, b)| a.same_shape(b))
    }

    /// Smallest tree refining both `self` and `other`: split where either
    /// splits, admissible where both are. Matrices are dropped.
    pub fn union(&self, other: &ColumnTree) -> ColumnTree {
        debug_assert_eq!(self.cluster, other.cluster);
        match (self.is_leaf(), other.is_leaf()) {
            (true, true) => ColumnTree::leaf(self.cluster, self.admissible && other.admissible, None),
            (false, false) => ColumnTree::split(
                self.cluster,
                self.children.iter().zip(&other.children).map(|(a, b)| a.union(b)).collect(),
            ),
            (false, true) => other.refined_shape(self),
            (true, false) => self.refined_shape(other),
        }
    }

    /// `self` is a leaf, `finer` is split: the union keeps `finer`'s shape
    /// with admissibility downgraded where `self` is inadmissible.
    fn refined_shape(&self, finer: &ColumnTree) -> ColumnTree {
        if finer.is_leaf() {
            return ColumnTree::leaf(finer.cluster, self.admissible && finer.admissible, None);
        }
        ColumnTree::split(
            finer.cluster,
            finer.children.iter().map(|c| self.refined_shape(c)).collect(),
        )
    }

    /// Indented text dump, one node per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.dump_rec(0, &mut out);
        out
    }

    fn dump_rec(&self, depth: usize, out: &mut String) {
        let tag = if !self.is_leaf() {
            "split"
        } else if self.admissible {
            "adm"
        } else {
            "inadm"
        };
        out.push_str(&format!("{}r{} {}\n", "  ".repeat(depth), self.cluster, tag));
        for c in &self.children {
            c.dump_rec(depth + 1, out);
        }
    }
}

/// Column tree of block `b` of `txy`: the column clusters of all descendants
/// of `b`, split wherever some descendant is subdivided. A leaf column
/// cluster is inadmissible iff some descendant ending in it is an
/// inadmissible leaf.
pub fn build_column_tree(txy: &BlockTree, b: usize) -> ColumnTree {
    column_rec(txy, txy.node(b).col, vec![b])
}

fn column_rec(txy: &BlockTree, r: usize, blocks: Vec<usize>) -> ColumnTree {
    let split = blocks.iter().any(|&b| txy.kind(b) == BlockKind::Internal);
    if !split {
        let admissible = blocks.iter().all(|&b| txy.kind(b) == BlockKind::Admissible);
        return ColumnTree::leaf(r, admissible, None);
    }
    let children = txy
        .cols
        .children(r)
        .iter()
        .map(|&r1| {
            let below: Vec<usize> = blocks
                .iter()
                .flat_map(|&b| txy.children(b).iter().copied())
                .filter(|&c| txy.node(c).col == r1)
                .collect();
            column_rec(txy, r1, below)
        })
        .collect();
    ColumnTree::split(r, children)
}
