//! Phase 2: re-compression of a product onto a coarser block tree.
//!
//! The input `G` lives on the product block tree and has isometric bases.
//! For every coarse admissible leaf `b` the new row basis has to capture
//! `G|_b`, which is made up of admissible product-tree leaves (handled by
//! total weights `Z_t`), dense leaves and subdivided blocks. Subdivided
//! blocks are represented by their projections `A_{t,r} = Q_tᵀ G|_{t̂×r̂}`
//! in column-tree form, merged bottom-up.

use std::sync::Arc;

use crate::dense::{hstack, left_singular_vectors, qr_r_factor, spectral_norm_lower_bound, vstack, Matrix};
use crate::error::{H2Error, Result};
use crate::h2::{ClusterBasis, H2Matrix, MatrixView};
use crate::induced::CompressionOptions;
use crate::trees::{BlockKind, BlockTree, ColumnTree};

/// Power iteration steps for the scaling norms.
const NORM_STEPS: usize = 8;

/// Links product-tree blocks to the coarse admissible leaves covering them.
#[derive(Clone, Debug)]
pub struct CoarseCover {
    /// Coarse admissible leaf containing each product-tree block, if any.
    pub cover: Vec<Option<usize>>,
    /// Scaling norm per coarse block (`1` without scaling, `0` for zero
    /// blocks).
    pub omega: Vec<f64>,
}

/// Checks that `coarse` is an ancestor-closed coarsening of the block tree
/// of `g` and returns the cover map.
///
/// `omega_b` is the largest (estimated from below) norm of the
/// product-tree leaves inside `b`, a lower bound of `‖G|_b‖` for isometric
/// bases.
pub fn coarse_cover(g: &H2Matrix, coarse: &BlockTree, scaling: bool) -> Result<CoarseCover> {
    let fine = &g.blocks;
    if !coarse.rows.same_structure(&fine.rows) || !coarse.cols.same_structure(&fine.cols) {
        return Err(H2Error::InvalidInput("coarse tree uses different cluster trees".into()));
    }
    coarse.check_level_synchronous()?;
    let mut cover = vec![None; fine.len()];
    let mut omega = vec![0.0; coarse.len()];
    for cb in 0..coarse.len() {
        let node = coarse.node(cb);
        let fb = fine.find(node.row, node.col).ok_or_else(|| {
            H2Error::InvalidInput(format!("coarse block ({}, {}) is finer than the product tree", node.row, node.col))
        })?;
        match node.kind {
            BlockKind::Internal if fine.kind(fb) != BlockKind::Internal => {
                return Err(H2Error::InvalidInput(format!(
                    "coarse block ({}, {}) is subdivided below a product-tree leaf",
                    node.row, node.col
                )));
            }
            BlockKind::Admissible => {
                let mut w: f64 = 0.0;
                for d in fine.subtree(fb) {
                    cover[d] = Some(cb);
                    if scaling {
                        match fine.kind(d) {
                            BlockKind::Admissible => {
                                w = w.max(spectral_norm_lower_bound(g.coupling_matrix(d), NORM_STEPS))
                            }
                            BlockKind::Inadmissible => {
                                w = w.max(spectral_norm_lower_bound(g.dense_block(d), NORM_STEPS))
                            }
                            BlockKind::Internal => {}
                        }
                    }
                }
                omega[cb] = if scaling { w } else { 1.0 };
            }
            _ => {}
        }
    }
    Ok(CoarseCover { cover, omega })
}

impl CoarseCover {
    /// Scale factor `1/ω` of the coarse block covering `b`; `None` outside
    /// coarse admissible leaves and for zero blocks.
    pub fn scale(&self, b: usize) -> Option<f64> {
        let cb = self.cover[b]?;
        let w = self.omega[cb];
        (w > 0.0).then(|| 1.0 / w)
    }
}

/// Total weights `Z_t` of the coarse-admissible part of `g` (top-down):
/// `Z_t` is the R factor of `[Z_{t⁺}E_tᵀ; S_{t,r}ᵀ/ω]` over the admissible
/// product-tree leaves `(t, r)` inside coarse admissible leaves.
pub fn coarsen_total_weights(g: &H2Matrix, cover: &CoarseCover) -> Vec<Matrix> {
    total_weights_oriented(&MatrixView::new(g, false), cover)
}

fn total_weights_oriented(g: &MatrixView, cover: &CoarseCover) -> Vec<Matrix> {
    let bt = &g.blocks;
    let tree = &bt.rows;
    let basis = g.row_basis();
    let mut z: Vec<Matrix> = vec![Matrix::zeros(0, 0); tree.len()];
    for t in 0..tree.len() {
        let mut parts = Vec::new();
        if let Some(p) = tree.node(t).parent {
            parts.push(&z[p] * basis.transfer_matrix(t).transpose());
        }
        for &b in bt.row_blocks(t) {
            if bt.kind(b) == BlockKind::Admissible {
                if let Some(scale) = cover.scale(b) {
                    parts.push(g.coupling_t(b).into_owned() * scale);
                }
            }
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        z[t] = qr_r_factor(&vstack(&refs, basis.rank(t)));
    }
    z
}

/// Extends `ct` to the shape of `target`: admissible leaves that `target`
/// subdivides get `A F_{r'}ᵀ` on the children, admissible leaves that
/// `target` marks inadmissible are expanded to `A W_rᵀ`, explicit leaves
/// are split by column ranges.
pub fn match_column(ct: &ColumnTree, target: &ColumnTree, w: &ClusterBasis) -> Result<ColumnTree> {
    if ct.cluster != target.cluster {
        return Err(H2Error::InvalidInput(format!(
            "column trees disagree: cluster {} vs {}",
            ct.cluster, target.cluster
        )));
    }
    if !target.is_leaf() {
        if !ct.is_leaf() {
            if ct.children.len() != target.children.len() {
                return Err(H2Error::InvalidInput("column trees split differently".into()));
            }
            let children = ct
                .children
                .iter()
                .zip(&target.children)
                .map(|(c, tc)| match_column(c, tc, w))
                .collect::<Result<Vec<_>>>()?;
            return Ok(ColumnTree::split(ct.cluster, children));
        }
        let a = leaf_matrix(ct)?;
        let tree = &w.tree;
        let children = target
            .children
            .iter()
            .map(|tc| {
                let sub = if ct.admissible {
                    a * w.transfer_matrix(tc.cluster).transpose()
                } else {
                    let off = tree.offset_in_parent(tc.cluster);
                    a.columns(off, tree.node(tc.cluster).size()).into_owned()
                };
                match_column(&ColumnTree::leaf(tc.cluster, ct.admissible, Some(sub)), tc, w)
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(ColumnTree::split(ct.cluster, children));
    }
    if !ct.is_leaf() {
        return Err(H2Error::InvalidInput(format!(
            "target column tree is coarser than the given one at cluster {}",
            ct.cluster
        )));
    }
    let a = leaf_matrix(ct)?;
    match (ct.admissible, target.admissible) {
        (true, false) => Ok(ColumnTree::leaf(ct.cluster, false, Some(a * w.expand(ct.cluster).transpose()))),
        (false, true) => Err(H2Error::InvalidInput(format!(
            "explicit columns at cluster {} cannot become admissible",
            ct.cluster
        ))),
        _ => Ok(ct.clone()),
    }
}

fn leaf_matrix(ct: &ColumnTree) -> Result<&Matrix> {
    ct.matrix
        .as_ref()
        .ok_or_else(|| H2Error::InvalidInput(format!("column tree leaf {} has no matrix", ct.cluster)))
}

/// Represented matrix `Σ A_{r'} W_{r'}ᵀ` (explicit leaves as is), with
/// columns in the order of the column cluster `ct.cluster`.
pub fn column_tree_dense(ct: &ColumnTree, w: &ClusterBasis) -> Result<Matrix> {
    if ct.is_leaf() {
        let a = leaf_matrix(ct)?;
        return Ok(if ct.admissible { a * w.expand(ct.cluster).transpose() } else { a.clone() });
    }
    let parts = ct.children.iter().map(|c| column_tree_dense(c, w)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Matrix> = parts.iter().collect();
    let rows = parts.first().map_or(0, |p| p.nrows());
    Ok(hstack(&refs, rows))
}

/// Stacks the rows of trees of identical shape.
fn stack_rows(trees: &[ColumnTree], cols_hint: &ColumnTree) -> ColumnTree {
    if cols_hint.is_leaf() {
        let mats: Vec<&Matrix> = trees.iter().map(|t| t.matrix.as_ref().expect("matched leaf")).collect();
        let cols = mats.first().map_or(0, |m| m.ncols());
        return ColumnTree::leaf(cols_hint.cluster, cols_hint.admissible, Some(vstack(&mats, cols)));
    }
    let children = (0..cols_hint.children.len())
        .map(|i| {
            let sub: Vec<ColumnTree> = trees.iter().map(|t| t.children[i].clone()).collect();
            stack_rows(&sub, &cols_hint.children[i])
        })
        .collect();
    ColumnTree::split(cols_hint.cluster, children)
}

fn map_leaves(ct: &mut ColumnTree, f: &dyn Fn(&Matrix) -> Matrix) {
    for leaf in ct.leaves_mut() {
        if let Some(m) = leaf.matrix.as_ref() {
            leaf.matrix = Some(f(m));
        }
    }
}

fn flatten(ct: &ColumnTree, rows: usize) -> Matrix {
    let leaves = ct.leaves();
    let mats: Vec<&Matrix> = leaves.iter().filter_map(|l| l.matrix.as_ref()).collect();
    hstack(&mats, rows)
}

/// New adaptive basis for the rows (or, through the transpose, columns) of
/// `g` on a coarse block tree.
#[derive(Clone, Debug)]
pub struct CoarsenState {
    /// New isometric basis.
    pub q: ClusterBasis,
    /// `R_t = Q_tᵀ V_t` with the old basis `V` of `g`.
    pub r: Vec<Matrix>,
    /// Total weights `Z_t`.
    pub z: Vec<Matrix>,
    /// `A_{t,r} = Q_tᵀ G|_{t̂×r̂}` for the product-tree blocks that are coarse
    /// admissible leaves but not admissible leaves of the product tree.
    pub a: Vec<Option<ColumnTree>>,
    pub cover: CoarseCover,
    /// Largest `(rows, columns)` of the matrices `C_t`, `Ĉ_t` before truncation.
    pub max_c_shape: (usize, usize),
}

/// Builds the adaptive row basis for `g` on the coarse block tree.
pub fn build_coarse_row_basis(g: &H2Matrix, coarse: &BlockTree, opts: &CompressionOptions) -> Result<CoarsenState> {
    let cover = coarse_cover(g, coarse, opts.scaling)?;
    build_basis(&MatrixView::new(g, false), cover, opts)
}

/// Adaptive column basis: the row algorithm applied to `gᵀ`.
pub fn build_coarse_col_basis(g: &H2Matrix, coarse: &BlockTree, opts: &CompressionOptions) -> Result<CoarsenState> {
    let cover = coarse_cover(g, coarse, opts.scaling)?;
    build_basis(&MatrixView::new(g, true), cover, opts)
}

/// Column basis reusing the cover computed for the row basis (block ids
/// and norms do not change under transposition).
pub fn build_coarse_col_basis_with_cover(
    g: &H2Matrix,
    cover: &CoarseCover,
    opts: &CompressionOptions,
) -> Result<CoarsenState> {
    build_basis(&MatrixView::new(g, true), cover.clone(), opts)
}

fn build_basis(g: &MatrixView, cover: CoarseCover, opts: &CompressionOptions) -> Result<CoarsenState> {
    let z = total_weights_oriented(g, &cover);
    let bt = &g.blocks;
    let tree = bt.rows.clone();
    let tree = &tree;
    let n = tree.len();
    let mut q = ClusterBasis::empty(tree.clone());
    let mut r: Vec<Matrix> = vec![Matrix::zeros(0, 0); n];
    let mut a: Vec<Option<ColumnTree>> = vec![None; bt.len()];
    let mut max_c_shape = (0, 0);

    for t in (0..n).rev() {
        let level = tree.node(t).level;
        let rule = opts.rule(level, 0);
        if tree.is_leaf(t) {
            let v = g.row_basis().leaf_matrix(t);
            let mut cols = vec![v * z[t].transpose()];
            let mut near = Vec::new();
            for &b in bt.row_blocks(t) {
                if bt.kind(b) != BlockKind::Inadmissible || cover.cover[b].is_none() {
                    continue;
                }
                let d = g.dense(b);
                if let Some(scale) = cover.scale(b) {
                    cols.push(d.as_ref() * scale);
                }
                near.push((b, d));
            }
            let refs: Vec<&Matrix> = cols.iter().collect();
            let c = hstack(&refs, v.nrows());
            max_c_shape = (max_c_shape.0.max(c.nrows()), max_c_shape.1.max(c.ncols()));
            let (u, _) = left_singular_vectors(&c, rule);
            r[t] = u.tr_mul(v);
            for (b, d) in near {
                let col = bt.node(b).col;
                a[b] = Some(ColumnTree::leaf(col, false, Some(u.tr_mul(&d))));
            }
            q.ranks[t] = u.ncols();
            q.leaf[t] = Some(u);
            continue;
        }

        let children = tree.children(t).to_vec();
        let parts: Vec<Matrix> =
            children.iter().map(|&c| &r[c] * g.row_basis().transfer_matrix(c)).collect();
        let refs: Vec<&Matrix> = parts.iter().collect();
        let vhat = vstack(&refs, g.row_basis().rank(t));
        let rows = vhat.nrows();
        let mut cols = vec![&vhat * z[t].transpose()];
        let mut merged = Vec::new();
        for &b in bt.row_blocks(t) {
            if bt.kind(b) != BlockKind::Internal || cover.cover[b].is_none() {
                continue;
            }
            let ahat = merge_children(g, b, &children, &q, &r, &mut a)?;
            if let Some(scale) = cover.scale(b) {
                cols.push(flatten(&ahat, rows) * scale);
            }
            merged.push((b, ahat));
        }
        let refs: Vec<&Matrix> = cols.iter().collect();
        let c = hstack(&refs, rows);
        max_c_shape = (max_c_shape.0.max(c.nrows()), max_c_shape.1.max(c.ncols()));
        let (u, _) = left_singular_vectors(&c, rule);
        r[t] = u.tr_mul(&vhat);
        for (b, mut ahat) in merged {
            map_leaves(&mut ahat, &|m| u.tr_mul(m));
            a[b] = Some(ahat);
        }
        let mut off = 0;
        for &ch in &children {
            let kc = q.ranks[ch];
            q.transfer[ch] = Some(u.rows(off, kc).into_owned());
            off += kc;
        }
        q.ranks[t] = u.ncols();
    }
    Ok(CoarsenState { q, r, z, a, cover, max_c_shape })
}

/// `Â_{t,r}` for the subdivided block `b = (t, r)`: the children's row
/// representations matched to their union column tree and stacked.
fn merge_children(
    g: &MatrixView,
    b: usize,
    children: &[usize],
    q: &ClusterBasis,
    r: &[Matrix],
    a: &mut [Option<ColumnTree>],
) -> Result<ColumnTree> {
    let bt = &g.blocks;
    let col = bt.node(b).col;
    let mut reps = Vec::with_capacity(children.len());
    for &t1 in children {
        let mut parts = Vec::new();
        for &r1 in bt.cols.children(col) {
            let c = bt
                .find(t1, r1)
                .ok_or_else(|| H2Error::Structure(format!("missing product block ({t1}, {r1})")))?;
            let rep = match bt.kind(c) {
                BlockKind::Admissible => ColumnTree::leaf(r1, true, Some(&r[t1] * g.coupling(c).as_ref())),
                _ => a[c].take().ok_or_else(|| H2Error::Structure(format!("block {c} not condensed")))?,
            };
            parts.push(rep);
        }
        debug_assert!(q.ranks[t1] == r[t1].nrows());
        reps.push(ColumnTree::split(col, parts));
    }
    let union = reps.iter().skip(1).fold(reps[0].clone(), |u, rep| u.union(rep));
    let matched = reps.iter().map(|rep| match_column(rep, &union, g.col_basis())).collect::<Result<Vec<_>>>()?;
    Ok(stack_rows(&matched, &union))
}

/// Final matrix on the coarse block tree in the new bases.
pub fn project_final(
    g: &H2Matrix,
    row: &CoarsenState,
    col: &CoarsenState,
    coarse: Arc<BlockTree>,
) -> Result<H2Matrix> {
    let fine = &g.blocks;
    let mut out = H2Matrix::zero(coarse.clone(), row.q.clone(), col.q.clone());
    for cb in 0..coarse.len() {
        let node = coarse.node(cb);
        let (t, r) = (node.row, node.col);
        let fb = fine.find(t, r).ok_or_else(|| H2Error::Structure(format!("coarse block {cb} not in product tree")))?;
        match (node.kind, fine.kind(fb)) {
            (BlockKind::Internal, _) => {}
            (BlockKind::Admissible, BlockKind::Admissible) => {
                out.coupling[cb] = Some(&row.r[t] * g.coupling_matrix(fb) * col.r[r].transpose());
            }
            (BlockKind::Admissible, _) => {
                if let Some(ct) = &row.a[fb] {
                    out.coupling[cb] = Some(evaluate(ct, col)?);
                }
            }
            (BlockKind::Inadmissible, BlockKind::Inadmissible) => {
                out.nearfield[cb] = Some(g.dense_block(fb).clone());
            }
            (BlockKind::Inadmissible, BlockKind::Admissible) => {
                out.nearfield[cb] = Some(
                    g.row_basis.leaf_matrix(t) * g.coupling_matrix(fb) * g.col_basis.leaf_matrix(r).transpose(),
                );
            }
            (BlockKind::Inadmissible, BlockKind::Internal) => {
                return Err(H2Error::Structure(format!("dense coarse block {cb} is subdivided in the product tree")));
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// `A Q'_r` for a row representation `A` in column-tree form.
fn evaluate(ct: &ColumnTree, col: &CoarsenState) -> Result<Matrix> {
    if ct.is_leaf() {
        let a = leaf_matrix(ct)?;
        return Ok(if ct.admissible {
            a * col.r[ct.cluster].transpose()
        } else {
            a * col.q.leaf_matrix(ct.cluster)
        });
    }
    let mut acc: Option<Matrix> = None;
    for c in &ct.children {
        let term = evaluate(c, col)? * col.q.transfer_matrix(c.cluster);
        acc = Some(match acc {
            Some(m) => m + term,
            None => term,
        });
    }
    Ok(acc.expect("split node has children"))
}

/// Phase 2 in one call.
pub fn coarsen(g: &H2Matrix, coarse: Arc<BlockTree>, opts: &CompressionOptions) -> Result<H2Matrix> {
    let row = build_coarse_row_basis(g, &coarse, opts)?;
    let col = build_coarse_col_basis_with_cover(g, &row.cover, opts)?;
    project_final(g, &row, &col, coarse)
}
