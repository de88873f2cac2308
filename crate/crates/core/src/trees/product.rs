use super::block::{Block, BlockKind, BlockTree};
use crate::error::{H2Error, Result};

/// Product block tree `T^XY` for the factors `X` (over `I×J`) and `Y` (over
/// `J×K`).
///
/// `(t, r)` is subdivided iff some middle cluster `s` has both `(t, s)` and
/// `(s, r)` subdivided. A leaf is inadmissible iff some `s` pairs two
/// inadmissible leaves, i.e. the product contains a dense leaf-level term;
/// every other leaf is admissible.
///
/// Both block trees have to be level-synchronous.
pub fn build_product_block_tree(x: &BlockTree, y: &BlockTree) -> Result<BlockTree> {
    if !x.cols.same_structure(&y.rows) {
        return Err(H2Error::InvalidInput("factors do not share the middle cluster tree".into()));
    }
    x.check_level_synchronous()?;
    y.check_level_synchronous()?;
    let mut nodes = Vec::new();
    let root_t = x.rows.root();
    let root_r = y.cols.root();
    product_rec(x, y, root_t, root_r, vec![x.cols.root()], None, &mut nodes);
    Ok(BlockTree::from_nodes(x.rows.clone(), y.cols.clone(), nodes))
}

fn product_rec(
    x: &BlockTree,
    y: &BlockTree,
    t: usize,
    r: usize,
    middle: Vec<usize>,
    parent: Option<usize>,
    nodes: &mut Vec<Block>,
) -> usize {
    let id = nodes.len();
    let mut next_middle = Vec::new();
    let mut dense = false;
    for &s in &middle {
        let (Some(xb), Some(yb)) = (x.find(t, s), y.find(s, r)) else { continue };
        match (x.kind(xb), y.kind(yb)) {
            (BlockKind::Internal, BlockKind::Internal) => next_middle.push(s),
            (BlockKind::Inadmissible, BlockKind::Inadmissible) => dense = true,
            _ => {}
        }
    }
    let kind = if !next_middle.is_empty() {
        BlockKind::Internal
    } else if dense {
        BlockKind::Inadmissible
    } else {
        BlockKind::Admissible
    };
    nodes.push(Block { row: t, col: r, children: Vec::new(), parent, kind });
    if kind != BlockKind::Internal {
        return id;
    }
    let mid_children: Vec<usize> =
        next_middle.iter().flat_map(|&s| x.cols.children(s).iter().copied()).collect();
    let mut children = Vec::new();
    for &t1 in x.rows.children(t) {
        for &r1 in y.cols.children(r) {
            children.push(product_rec(x, y, t1, r1, mid_children.clone(), Some(id), nodes));
        }
    }
    nodes[id].children = children;
    id
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::trees::{BBox, ClusterTree};

    fn line_tree(n: usize, leaf: usize) -> Arc<ClusterTree> {
        let pts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let supports: Vec<_> = (0..n)
            .map(|i| BBox { min: vec![i as f64 / n as f64], max: vec![(i + 1) as f64 / n as f64] })
            .collect();
        Arc::new(ClusterTree::build_with_supports(&pts, 1, Some(&supports), leaf).unwrap())
    }

    #[test]
    fn tiny_dense_product() {
        let tree = line_tree(3, 4);
        let bt = BlockTree::build(tree.clone(), tree, 2.0).unwrap();
        let p = build_product_block_tree(&bt, &bt).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.kind(0), BlockKind::Inadmissible);
    }

    #[test]
    fn root_admissible_product() {
        let a = Arc::new(ClusterTree::build(&[0.0, 0.1, 0.2, 0.3], 1, 1).unwrap());
        let b = Arc::new(ClusterTree::build(&[10.0, 10.1, 10.2, 10.3], 1, 1).unwrap());
        let x = BlockTree::build(a.clone(), b.clone(), 1.0).unwrap();
        let y = BlockTree::build(b, a, 1.0).unwrap();
        let p = build_product_block_tree(&x, &y).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.kind(0), BlockKind::Admissible);
    }

    #[test]
    fn mismatched_middle_tree() {
        let a = line_tree(16, 2);
        let b = line_tree(32, 2);
        let x = BlockTree::build(a.clone(), a.clone(), 2.0).unwrap();
        let y = BlockTree::build(b.clone(), b, 2.0).unwrap();
        assert!(build_product_block_tree(&x, &y).is_err());
    }

    /// Each admissible block of the input splits into at most 16 sub-blocks
    /// of the product tree (depth-4 one-dimensional example).
    #[test]
    fn refinement_of_admissible_blocks() {
        let tree = line_tree(16, 1);
        let bt = BlockTree::build(tree.clone(), tree, 1.0).unwrap();
        let p = build_product_block_tree(&bt, &bt).unwrap();
        assert_eq!(p.leaf_area(), 256);
        let mut max_sub = 0;
        let mut refined = 0;
        for b in 0..bt.len() {
            if bt.kind(b) != BlockKind::Admissible {
                continue;
            }
            let node = bt.node(b);
            let pb = p.find(node.row, node.col).expect("coarse block present in product tree");
            let leaves = p.subtree(pb).into_iter().filter(|&c| p.node(c).is_leaf()).count();
            max_sub = max_sub.max(leaves);
            if leaves > 1 {
                refined += 1;
            }
        }
        assert!(max_sub <= 16);
        assert!(refined > 0);
    }
}
