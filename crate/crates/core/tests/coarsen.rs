mod common;

use std::sync::Arc;

use common::*;
use h2mult::coarsen::*;
use h2mult::dense::{spectral_norm, Matrix};
use h2mult::h2::orthogonalize_basis;
use h2mult::induced::{induced_product, CompressionOptions};
use h2mult::model::ModelSetup;
use h2mult::trees::{build_column_tree, ColumnTree};
use h2mult::{BlockKind, BlockTree, ClusterBasis, ClusterTree, H2Matrix};
use proptest::prelude::*;
use rand::Rng;

/// Phase-1 product `X·X` of a model matrix at tolerance `tol`.
fn product(s: &ModelSetup, tol: f64) -> H2Matrix {
    induced_product(&s.matrix, &s.matrix, &CompressionOptions::new(tol)).unwrap()
}

#[test]
fn zero_tolerance_reproduces_phase_one() {
    let s = log_setup(256, 4);
    let g = product(&s, 0.0);
    let f = coarsen(&g, s.blocks.clone(), &CompressionOptions::new(0.0)).unwrap();
    assert!(Arc::ptr_eq(&f.blocks, &s.blocks));
    assert!(rel_err(&dense(&f), &dense(&g)) <= 1e-10);
    assert!(f.row_basis.isometry_defect() <= 1e-11);
    assert!(f.col_basis.isometry_defect() <= 1e-11);
}

#[test]
fn coarsening_onto_the_product_tree_is_a_change_of_basis() {
    let s = log_setup(256, 4);
    let g = product(&s, 1e-8);
    let f = coarsen(&g, g.blocks.clone(), &CompressionOptions::new(0.0)).unwrap();
    assert!(rel_err(&dense(&f), &dense(&g)) <= 1e-12);

    let exact = dense(&s.matrix) * dense(&s.matrix);
    let e1 = rel_err(&dense(&g), &exact);
    let tol = 1e-4;
    let f = coarsen(&g, g.blocks.clone(), &CompressionOptions::new(tol)).unwrap();
    assert!(rel_err(&dense(&f), &exact) <= e1 + tol);
}

#[test]
fn zero_product_gives_zero_matrix() {
    let s = log_setup(128, 3);
    let mut g = product(&s, 1e-6);
    for m in g.coupling.iter_mut().chain(g.nearfield.iter_mut()).flatten() {
        m.fill(0.0);
    }
    let f = coarsen(&g, s.blocks.clone(), &CompressionOptions::new(1e-4)).unwrap();
    assert!(f.coupling.iter().chain(f.nearfield.iter()).flatten().all(|m| m.iter().all(|&v| v == 0.0)));
}

fn check_block_relative(s: &ModelSetup, eps: f64) {
    let g = product(s, eps);
    let f = coarsen(&g, s.blocks.clone(), &CompressionOptions::new(eps)).unwrap();
    let (gd, fd) = (dense(&g), dense(&f));
    let bt = &s.blocks;
    for b in bt.leaves().filter(|&b| bt.kind(b) == BlockKind::Admissible) {
        let (t, r) = (bt.node(b).row, bt.node(b).col);
        let gb = restrict(&gd, &bt.rows, t, &bt.cols, r);
        let fb = restrict(&fd, &bt.rows, t, &bt.cols, r);
        let err = spectral_norm(&(&gb - &fb));
        assert!(err <= 10.0 * eps * spectral_norm(&gb), "block {b}: {err:e}");
    }
}

#[test]
fn block_relative_bounds_interval() {
    let s = log_setup(512, 4);
    for eps in [1e-2, 1e-4, 1e-6] {
        check_block_relative(&s, eps);
    }
}

#[test]
fn block_relative_bounds_sphere() {
    check_block_relative(&sphere_setup(512, 3), 1e-4);
}

#[test]
fn condensed_blocks_are_projections() {
    let s = log_setup(256, 4);
    let g = product(&s, 1e-8);
    let opts = CompressionOptions::new(1e-6);
    let row = build_coarse_row_basis(&g, &s.blocks, &opts).unwrap();
    let col = build_coarse_col_basis(&g, &s.blocks, &opts).unwrap();
    let gd = dense(&g);
    let bt = &g.blocks;
    let mut seen = 0;
    for b in 0..bt.len() {
        let (t, r) = (bt.node(b).row, bt.node(b).col);
        let blk = restrict(&gd, &bt.rows, t, &bt.cols, r);
        if let Some(ct) = &row.a[b] {
            assert!(ct.same_shape(&build_column_tree(bt, b)), "block {b}");
            let a = column_tree_dense(ct, &g.col_basis).unwrap();
            let want = row.q.expand(t).tr_mul(&blk);
            assert!(spectral_norm(&(a - &want)) <= 1e-12 * spectral_norm(&blk).max(1e-300));
            seen += 1;
        }
        if let Some(ct) = &col.a[b] {
            let a = column_tree_dense(ct, &g.row_basis).unwrap();
            let want = col.q.expand(r).tr_mul(&blk.transpose());
            assert!(spectral_norm(&(a - &want)) <= 1e-12 * spectral_norm(&blk).max(1e-300));
        }
    }
    assert!(seen > 0);
}

#[test]
fn shared_cover_gives_same_column_basis() {
    let s = log_setup(256, 3);
    let g = product(&s, 1e-6);
    let opts = CompressionOptions::new(1e-4);
    let row = build_coarse_row_basis(&g, &s.blocks, &opts).unwrap();
    let a = build_coarse_col_basis(&g, &s.blocks, &opts).unwrap();
    let b = build_coarse_col_basis_with_cover(&g, &row.cover, &opts).unwrap();
    assert_eq!(a.q.ranks, b.q.ranks);
    assert!(a.q.leaf.iter().zip(&b.q.leaf).all(|(x, y)| x == y));
}

#[test]
fn column_basis_is_row_basis_of_transpose() {
    let s = log_setup(256, 3);
    let g = product(&s, 1e-6);
    let opts = CompressionOptions::new(1e-4);
    let col = build_coarse_col_basis(&g, &s.blocks, &opts).unwrap();
    let gt = g.transpose();
    let row_t = build_coarse_row_basis(&gt, &s.blocks.transpose(), &opts).unwrap();
    assert_eq!(col.q.ranks, row_t.q.ranks);
    for t in 0..col.q.tree.len() {
        let (p, q) = (col.q.expand(t), row_t.q.expand(t));
        assert!(spectral_norm(&(&p * p.transpose() - &q * q.transpose())) <= 1e-10);
    }
}

#[test]
fn coarse_tree_must_be_coarser() {
    let s = log_setup(128, 3);
    let g = product(&s, 1e-6);
    let opts = CompressionOptions::new(1e-4);
    let other = line_blocks(128, 2, 2.0);
    assert!(build_coarse_row_basis(&g, &other, &opts).is_err());
    // a final matrix on the input tree cannot be coarsened onto a finer tree
    let f = coarsen(&g, s.blocks.clone(), &opts).unwrap();
    let finer = BlockTree::build(s.tree.clone(), s.tree.clone(), 0.5).unwrap();
    assert!(build_coarse_row_basis(&f, &finer, &opts).is_err());
}

// total weights

fn far_pair() -> Arc<BlockTree> {
    let a = Arc::new(ClusterTree::build(&[0.0, 0.1, 0.2, 0.3], 1, 4).unwrap());
    let b = Arc::new(ClusterTree::build(&[9.0, 9.1, 9.2], 1, 4).unwrap());
    Arc::new(BlockTree::build(a, b, 2.0).unwrap())
}

#[test]
fn total_weights_empty_without_admissible_blocks() {
    let g = random_h2(6, 8, 2.0, 2, 1);
    let cover = coarse_cover(&g, &g.blocks, true).unwrap();
    assert!(coarsen_total_weights(&g, &cover).iter().all(|z| z.nrows() == 0));
}

#[test]
fn total_weights_of_single_admissible_root() {
    let bt = far_pair();
    let g = H2Matrix::random(bt.clone(), 3, &mut rng(2));
    let cover = coarse_cover(&g, &bt, false).unwrap();
    let z = &coarsen_total_weights(&g, &cover)[0];
    let s = g.coupling_matrix(0);
    assert!((z.tr_mul(z) - s * s.transpose()).norm() <= 1e-12 * s.norm_squared());
}

#[test]
fn total_weights_gram_identity() {
    let s = log_setup(128, 3);
    let g = product(&s, 1e-8);
    let cover = coarse_cover(&g, &s.blocks, true).unwrap();
    let z = coarsen_total_weights(&g, &cover);
    let bt = &g.blocks;
    let tree = &bt.rows;
    for t in 0..tree.len() {
        let vt = g.row_basis.expand(t);
        let k = vt.ncols();
        let mut gram = Matrix::zeros(k, k);
        let mut anc = Some(t);
        while let Some(a) = anc {
            let off = tree.range(t).start - tree.range(a).start;
            let e = vt.tr_mul(&g.row_basis.expand(a).rows(off, vt.nrows()));
            for &b in bt.row_blocks(a) {
                if bt.kind(b) != BlockKind::Admissible {
                    continue;
                }
                let Some(scale) = cover.scale(b) else { continue };
                let m = &e * g.coupling_matrix(b) * scale;
                gram += &m * m.transpose();
            }
            anc = tree.node(a).parent;
        }
        assert!((z[t].tr_mul(&z[t]) - &gram).norm() <= 1e-10 * (1.0 + gram.norm()), "cluster {t}");
    }
}

// column trees

fn small_basis(seed: u64) -> ClusterBasis {
    let tree = line_tree(16, 4);
    orthogonalize_basis(&ClusterBasis::random(tree, 2, &mut rng(seed))).0
}

#[test]
fn match_column_identity() {
    let w = small_basis(3);
    let ct = ColumnTree::leaf(0, true, Some(Matrix::from_element(3, w.rank(0), 0.5)));
    let target = ColumnTree::leaf(0, true, None);
    assert_eq!(match_column(&ct, &target, &w).unwrap(), ct);
}

#[test]
fn match_column_split_keeps_product() {
    let w = small_basis(4);
    let mut rng = rng(5);
    let a = Matrix::from_fn(3, w.rank(0), |_, _| rng.gen_range(-1.0..1.0));
    let ct = ColumnTree::leaf(0, true, Some(a.clone()));
    let kids: Vec<ColumnTree> = w.tree.children(0).iter().map(|&c| ColumnTree::leaf(c, true, None)).collect();
    let target = ColumnTree::split(0, kids);
    let m = match_column(&ct, &target, &w).unwrap();
    assert!(m.same_shape(&target));
    for (leaf, &c) in m.leaves().iter().zip(w.tree.children(0)) {
        let want = &a * w.transfer_matrix(c).transpose();
        assert!((leaf.matrix.as_ref().unwrap() - want).norm() <= 1e-14);
    }
    let before = column_tree_dense(&ct, &w).unwrap();
    let after = column_tree_dense(&m, &w).unwrap();
    assert!((before - after).norm() <= 1e-12 * a.norm());
}

#[test]
fn match_column_admissible_to_explicit() {
    let w = small_basis(6);
    let c = w.tree.children(0)[1];
    let a = Matrix::from_element(2, w.rank(c), 1.0);
    let ct = ColumnTree::leaf(c, true, Some(a.clone()));
    let m = match_column(&ct, &ColumnTree::leaf(c, false, None), &w).unwrap();
    assert!(!m.admissible);
    assert_eq!(m.matrix.as_ref().unwrap(), &(&a * w.expand(c).transpose()));
    assert!(match_column(&m, &ColumnTree::leaf(c, true, None), &w).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn match_column_reassembles_exactly(seed in 0u64..10_000) {
        let mut rng = rng(seed);
        let w = small_basis(seed);
        let ct = random_column_tree(&w, 0, 3, &mut rng, 3);
        let target = refine(&ct, &w, &mut rng);
        let m = match_column(&ct, &target, &w).unwrap();
        prop_assert!(m.same_shape(&target));
        let before = column_tree_dense(&ct, &w).unwrap();
        let after = column_tree_dense(&m, &w).unwrap();
        prop_assert!((&before - &after).norm() <= 1e-12 * (1.0 + before.norm()));
    }
}
