mod common;

use std::sync::Arc;

use common::*;
use h2mult::bench::{estimate_relative_spectral_error, DenseOperator};
use h2mult::dense::{spectral_norm, Matrix};
use h2mult::h2::permute_dense;
use h2mult::model::*;
use h2mult::{BlockKind, BlockTree, ClusterTree, H2Matrix};

fn interpolated(p: KernelProblem, leaf: usize) -> (H2Matrix, Matrix) {
    let disc = build_geometry(&p).unwrap();
    let tree = Arc::new(ClusterTree::build_with_supports(&disc.points, disc.dim, Some(&disc.supports), leaf).unwrap());
    let blocks = Arc::new(BlockTree::build(tree.clone(), tree.clone(), 2.0).unwrap());
    let g = build_h2_by_interpolation(&p, &disc, blocks).unwrap();
    let d = permute_dense(&dense_kernel_matrix(&p, &disc).unwrap(), &tree.perm, &tree.perm);
    (g, d)
}

/// `‖G − D‖₂ / ‖D‖₂` by power iteration with `G` as `x · I`.
fn power_error(g: &H2Matrix, d: &Matrix) -> f64 {
    let id = Matrix::identity(d.ncols(), d.ncols());
    estimate_relative_spectral_error(&DenseOperator(d), &DenseOperator(&id), g, 40, 1).unwrap()
}

#[test]
fn interval_interpolation_error_at_order_five() {
    let (g, d) = interpolated(KernelProblem::log_1d(1024, 5), 10);
    let est = power_error(&g, &d);
    assert!(est <= 1e-4, "{est:e}");
    let exact = rel_err(&dense(&g), &d);
    assert!(exact <= 1e-4, "{exact:e}");
}

#[test]
fn error_decreases_with_order() {
    let errs: Vec<f64> = (3..=6)
        .map(|m| {
            let (g, d) = interpolated(KernelProblem::log_1d(512, m), 2 * m);
            rel_err(&dense(&g), &d)
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn constant_kernel_gives_rank_one_blocks() {
    let p = KernelProblem { kernel: Kernel::Constant, ..KernelProblem::slp_sphere(512, 3) };
    let (g, _) = interpolated(p, 18);
    let bt = &g.blocks;
    let mut count = 0;
    for b in bt.leaves().filter(|&b| bt.kind(b) == BlockKind::Admissible) {
        let blk = g.block_dense(b);
        let s = blk.singular_values();
        let mut s: Vec<f64> = s.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[1] <= 1e-12 * s[0], "block {b}: {:e}", s[1] / s[0]);
        count += 1;
    }
    assert!(count > 0);
}

#[test]
fn sphere_far_field_close_to_kernel() {
    let (g, d) = interpolated(KernelProblem::slp_sphere(512, 4), 32);
    let gd = dense(&g);
    let bt = &g.blocks;
    let mut worst: f64 = 0.0;
    for b in bt.leaves() {
        let (t, s) = (bt.node(b).row, bt.node(b).col);
        let exact = restrict(&d, &bt.rows, t, &bt.cols, s);
        let approx = restrict(&gd, &bt.rows, t, &bt.cols, s);
        let err = (&exact - &approx).amax();
        match bt.kind(b) {
            BlockKind::Inadmissible => assert_eq!(err, 0.0),
            _ => worst = worst.max(err / exact.amax()),
        }
    }
    assert!(worst <= 1e-2, "{worst:e}");
    assert!(spectral_norm(&(&gd - &d)) <= 2e-4 * spectral_norm(&d));
}

#[test]
fn orthogonalized_setup_keeps_the_matrix() {
    let p = KernelProblem::dlp_cube(192, 3);
    let s = ModelSetup::new(p, 2.0, None).unwrap();
    assert!(s.matrix.row_basis.isometry_defect() <= 1e-11);
    assert!(s.matrix.col_basis.isometry_defect() <= 1e-11);
    let (g, _) = interpolated(p, p.default_leaf_size());
    assert!(rel_err(&dense(&s.matrix), &dense(&g)) <= 1e-12);
}

#[test]
fn recompression_stays_within_tolerance() {
    let mut s = sphere_setup(512, 4);
    let before = dense(&s.matrix);
    let k0 = s.matrix.row_basis.max_rank();
    s.recompress(1e-6).unwrap();
    assert!(s.matrix.row_basis.max_rank() <= k0);
    assert!(rel_err(&dense(&s.matrix), &before) <= 1e-5);
}

#[test]
fn unrealizable_sizes_are_rejected() {
    assert!(build_geometry(&KernelProblem::slp_sphere(256, 3)).is_err());
    assert!(build_geometry(&KernelProblem::dlp_cube(100, 3)).is_err());
    assert!(build_geometry(&KernelProblem::log_1d(1, 3)).is_err());
    assert!(ModelSetup::new(KernelProblem::log_1d(64, 0), 2.0, None).is_err());
}
