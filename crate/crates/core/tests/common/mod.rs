#![allow(dead_code)]

use std::sync::Arc;

use h2mult::dense::{spectral_norm, Matrix};
use h2mult::model::{KernelProblem, ModelSetup};
use h2mult::trees::{BBox, ColumnTree};
use h2mult::{BlockTree, ClusterBasis, ClusterTree, H2Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cluster tree of `n` equal cells on `[0, 1]`.
pub fn line_tree(n: usize, leaf: usize) -> Arc<ClusterTree> {
    let pts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let sup: Vec<_> = (0..n)
        .map(|i| BBox { min: vec![i as f64 / n as f64], max: vec![(i + 1) as f64 / n as f64] })
        .collect();
    Arc::new(ClusterTree::build_with_supports(&pts, 1, Some(&sup), leaf).unwrap())
}

pub fn line_blocks(n: usize, leaf: usize, eta: f64) -> Arc<BlockTree> {
    let t = line_tree(n, leaf);
    Arc::new(BlockTree::build(t.clone(), t, eta).unwrap())
}

pub fn random_h2(n: usize, leaf: usize, eta: f64, k: usize, seed: u64) -> H2Matrix {
    H2Matrix::random(line_blocks(n, leaf, eta), k, &mut rng(seed))
}

/// `‖a − b‖₂ / ‖b‖₂` computed densely.
pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    spectral_norm(&(a - b)) / spectral_norm(b)
}

pub fn dense(g: &H2Matrix) -> Matrix {
    g.to_dense().unwrap()
}

pub fn log_setup(n: usize, order: usize) -> ModelSetup {
    ModelSetup::new(KernelProblem::log_1d(n, order), 2.0, None).unwrap()
}

pub fn sphere_setup(n: usize, order: usize) -> ModelSetup {
    ModelSetup::new(KernelProblem::slp_sphere(n, order), 2.0, None).unwrap()
}

/// `‖(I − Q Qᵀ) a‖₂` for isometric `q`.
pub fn projection_residual(q: &Matrix, a: &Matrix) -> f64 {
    spectral_norm(&(a - q * q.tr_mul(a)))
}

/// Submatrix of `a` for the index ranges of row cluster `t` and column
/// cluster `s`.
pub fn restrict(a: &Matrix, rows: &ClusterTree, t: usize, cols: &ClusterTree, s: usize) -> Matrix {
    let (r, c) = (rows.range(t), cols.range(s));
    a.view((r.start, c.start), (r.len(), c.len())).into_owned()
}

/// Random column tree below `t` with `rows` rows, mixing admissible and
/// explicit leaves.
pub fn random_column_tree(w: &ClusterBasis, t: usize, rows: usize, rng: &mut impl Rng, depth: usize) -> ColumnTree {
    let tree = &w.tree;
    if tree.is_leaf(t) || depth == 0 || rng.gen_bool(0.4) {
        let adm = rng.gen_bool(0.6);
        let cols = if adm { w.rank(t) } else { tree.node(t).size() };
        return ColumnTree::leaf(t, adm, Some(Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))));
    }
    let kids = tree.children(t).iter().map(|&c| random_column_tree(w, c, rows, rng, depth - 1)).collect();
    ColumnTree::split(t, kids)
}

/// `ct` with leaves randomly subdivided or made explicit.
pub fn refine(ct: &ColumnTree, w: &ClusterBasis, rng: &mut impl Rng) -> ColumnTree {
    if !ct.is_leaf() {
        return ColumnTree::split(ct.cluster, ct.children.iter().map(|c| refine(c, w, rng)).collect());
    }
    let tree = &w.tree;
    if ct.admissible && !tree.is_leaf(ct.cluster) && rng.gen_bool(0.5) {
        let kids = tree.children(ct.cluster).iter().map(|&c| ColumnTree::leaf(c, rng.gen_bool(0.5), None)).collect();
        return ColumnTree::split(ct.cluster, kids);
    }
    ColumnTree::leaf(ct.cluster, ct.admissible && rng.gen_bool(0.7), None)
}
