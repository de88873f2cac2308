//! Phase 1: compressed induced row and column bases of a product `X·Y`
//! and assembly of the product on the refined product block tree.
//!
//! The row basis of the product has to represent the ranges of `V_{X,t}` and
//! of `X|_{t̂×ŝ} V_{Y,s}` for every non-admissible block `(t, s)` of `X`.
//! The first part is kept exactly; the second is weighted with the total
//! weights of `Y` and truncated. The column basis is obtained by running
//! the same procedure for `Yᵀ Xᵀ`.

use std::sync::Arc;

use crate::dense::{hstack, left_singular_vectors, spectral_norm, vstack, Householder, Matrix, Truncation};
use crate::error::{H2Error, Result};
use crate::h2::{cluster_basis_product, BasisProduct, ClusterBasis, H2Matrix, MatrixView};
use crate::trees::{build_product_block_tree, BlockKind, BlockTree};
use crate::weights::{basis_weights, total_weights, total_weights_of, TotalWeights};

/// Truncation settings of both phases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressionOptions {
    /// Absolute tolerance applied to the scaled matrices.
    pub tol: f64,
    /// Optional cap on the number of new basis vectors per cluster.
    pub max_rank: Option<usize>,
    /// Divide every block by (a bound of) its norm before truncation.
    pub scaling: bool,
    /// The tolerance on level `l` is `tol · level_decay^l`; `1` disables it.
    pub level_decay: f64,
}

impl CompressionOptions {
    pub fn new(tol: f64) -> Self {
        Self { tol, max_rank: None, scaling: true, level_decay: 1.0 }
    }

    pub(crate) fn rule(&self, level: usize, protected: usize) -> Truncation {
        let tol = self.tol * self.level_decay.powi(level as i32);
        Truncation::absolute(tol).with_max_rank(self.max_rank.map(|m| m.saturating_sub(protected)))
    }
}

/// Result of compressing an induced row (or column) basis.
#[derive(Clone, Debug)]
pub struct InducedBasis {
    /// New isometric basis over the row tree of `X`.
    pub q: ClusterBasis,
    /// `R_{X,t} = Q_tᵀ V_{X,t}`.
    pub r: Vec<Matrix>,
    /// `A_{t,s} = Q_tᵀ X|_{t̂×ŝ} V_{Y,s}` for every non-admissible block
    /// `(t, s)` of `X`, indexed by block id.
    pub a: Vec<Option<Matrix>>,
    /// Number of protected columns `k_1` per cluster.
    pub protected: Vec<usize>,
}

/// Isometric basis of `[V_X | B_1 ... B_m]` that contains the range of
/// `V_X` exactly and approximates the remaining blocks.
#[derive(Clone, Debug)]
pub struct ProtectedBasis {
    pub q: Matrix,
    pub protected: usize,
    /// Singular values of the remainder after removing `range(V_X)`.
    pub sigma: Vec<f64>,
}

/// Householder-protects the columns of `vx` and truncates the remainder of
/// `blocks` by `rule`.
pub fn protected_truncation(vx: &Matrix, blocks: &[Matrix], rule: Truncation) -> ProtectedBasis {
    let m = vx.nrows();
    let k1 = vx.ncols().min(m);
    let refs: Vec<&Matrix> = blocks.iter().collect();
    let mut b = hstack(&refs, m);
    let h = Householder::new(vx.clone());
    h.apply_qt(&mut b);
    let remainder = b.rows(k1, m - k1).into_owned();
    let (qt, sigma) = left_singular_vectors(&remainder, rule);
    let k2 = qt.ncols();
    let mut q = Matrix::zeros(m, k1 + k2);
    for i in 0..k1 {
        q[(i, i)] = 1.0;
    }
    q.view_mut((k1, k1), (m - k1, k2)).copy_from(&qt);
    h.apply_q(&mut q);
    ProtectedBasis { q, protected: k1, sigma }
}

fn check_factors(x: &BlockTree, y: &BlockTree) -> Result<()> {
    if !x.cols.same_structure(&y.rows) {
        return Err(H2Error::InvalidInput("factors do not share the middle cluster tree".into()));
    }
    x.check_level_synchronous()?;
    y.check_level_synchronous()
}

/// Scale factor `1/‖m‖` (or `1` without scaling); `None` for zero blocks.
fn block_scale(m: &Matrix, scaling: bool) -> Option<f64> {
    if !scaling {
        return Some(1.0);
    }
    let norm = spectral_norm(m);
    (norm > 0.0).then(|| 1.0 / norm)
}

/// Leaf-level ingredients of the compression at leaf cluster `t`:
/// `X|_{t̂×ŝ} V_{Y,s}` for every inadmissible `(t, s)` (with block ids) and
/// the weighted, scaled blocks `X|_{t̂×ŝ} V_{Y,s} Z_sᵀ`.
fn leaf_blocks(
    x: &MatrixView,
    y: &MatrixView,
    zy: &TotalWeights,
    t: usize,
    scaling: bool,
) -> Result<(Vec<(usize, Matrix)>, Vec<Matrix>)> {
    let xb = &x.blocks;
    let mut raw = Vec::new();
    let mut weighted = Vec::new();
    for &b in xb.row_blocks(t) {
        match xb.kind(b) {
            BlockKind::Admissible => {}
            BlockKind::Inadmissible => {
                let s = xb.node(b).col;
                let m = x.dense(b).as_ref() * y.row_basis().leaf_matrix(s);
                if let Some(scale) = block_scale(&m, scaling) {
                    weighted.push(&m * zy.z[s].transpose() * scale);
                }
                raw.push((b, m));
            }
            BlockKind::Internal => {
                return Err(H2Error::Structure(format!("leaf cluster {t} has a subdivided block")));
            }
        }
    }
    Ok((raw, weighted))
}

/// Builds the compressed induced row basis of `X·Y` (bottom-up).
///
/// `zy` are the total weights of `Y`, `pxy` the products `W_{X,s}ᵀ V_{Y,s}`.
pub fn compress_induced_row_basis(
    x: &H2Matrix,
    y: &H2Matrix,
    zy: &TotalWeights,
    pxy: &BasisProduct,
    opts: &CompressionOptions,
) -> Result<InducedBasis> {
    compress_row(&MatrixView::plain(x), &MatrixView::plain(y), zy, pxy, opts)
}

fn compress_row(
    x: &MatrixView,
    y: &MatrixView,
    zy: &TotalWeights,
    pxy: &BasisProduct,
    opts: &CompressionOptions,
) -> Result<InducedBasis> {
    check_factors(&x.blocks, &y.blocks)?;
    let xb = &x.blocks;
    let tree = xb.rows.clone();
    let n = tree.len();
    let mut q = ClusterBasis::empty(tree.clone());
    let mut r: Vec<Matrix> = vec![Matrix::zeros(0, 0); n];
    let mut a: Vec<Option<Matrix>> = vec![None; xb.len()];
    let mut protected = vec![0; n];
    for t in (0..n).rev() {
        let level = tree.node(t).level;
        if tree.is_leaf(t) {
            let vx = x.row_basis().leaf_matrix(t);
            let (raw, weighted) = leaf_blocks(x, y, zy, t, opts.scaling)?;
            let pb = protected_truncation(vx, &weighted, opts.rule(level, vx.ncols()));
            r[t] = pb.q.tr_mul(vx);
            for (b, m) in raw {
                a[b] = Some(pb.q.tr_mul(&m));
            }
            q.ranks[t] = pb.q.ncols();
            protected[t] = pb.protected;
            q.leaf[t] = Some(pb.q);
            continue;
        }
        let children = tree.children(t).to_vec();
        let kx = x.row_basis().rank(t);
        let parts: Vec<Matrix> =
            children.iter().map(|&c| &r[c] * x.row_basis().transfer_matrix(c)).collect();
        let refs: Vec<&Matrix> = parts.iter().collect();
        let vhat = vstack(&refs, kx);
        let mut raw = Vec::new();
        let mut weighted = Vec::new();
        for &b in xb.row_blocks(t) {
            match xb.kind(b) {
                BlockKind::Admissible => continue,
                BlockKind::Inadmissible => {
                    return Err(H2Error::Structure(format!("non-leaf cluster {t} has a dense block")));
                }
                BlockKind::Internal => {}
            }
            let s = xb.node(b).col;
            let ahat = condensed_block(x, y, pxy, &r, &a, &q, &children, s)?;
            if let Some(scale) = block_scale(&ahat, opts.scaling) {
                weighted.push(&ahat * zy.z[s].transpose() * scale);
            }
            raw.push((b, ahat));
        }
        let pb = protected_truncation(&vhat, &weighted, opts.rule(level, kx));
        r[t] = pb.q.tr_mul(&vhat);
        for (b, m) in raw {
            a[b] = Some(pb.q.tr_mul(&m));
        }
        let mut off = 0;
        for &c in &children {
            let kc = q.ranks[c];
            q.transfer[c] = Some(pb.q.rows(off, kc).into_owned());
            off += kc;
        }
        q.ranks[t] = pb.q.ncols();
        protected[t] = pb.protected;
    }
    Ok(InducedBasis { q, r, a, protected })
}

/// `Â_{t,s} = U_tᵀ X|_{t̂×ŝ} V_{Y,s}` assembled from the children of `t`.
#[allow(clippy::too_many_arguments)]
fn condensed_block(
    x: &MatrixView,
    y: &MatrixView,
    pxy: &BasisProduct,
    r: &[Matrix],
    a: &[Option<Matrix>],
    q: &ClusterBasis,
    children: &[usize],
    s: usize,
) -> Result<Matrix> {
    let xb = &x.blocks;
    let ky = y.row_basis().rank(s);
    let rows: usize = children.iter().map(|&c| q.ranks[c]).sum();
    let mut ahat = Matrix::zeros(rows, ky);
    let mut off = 0;
    for &t1 in children {
        let kt = q.ranks[t1];
        let mut acc = Matrix::zeros(kt, ky);
        for &s1 in xb.cols.children(s) {
            let b1 = xb
                .find(t1, s1)
                .ok_or_else(|| H2Error::Structure(format!("missing block ({t1}, {s1})")))?;
            let e = y.row_basis().transfer_matrix(s1);
            if xb.kind(b1) == BlockKind::Admissible {
                acc.gemm(1.0, &(&r[t1] * x.coupling(b1).as_ref() * &pxy.p[s1]), e, 1.0);
            } else {
                acc.gemm(1.0, a[b1].as_ref().ok_or_else(|| missing(b1))?, e, 1.0);
            }
        }
        ahat.view_mut((off, 0), (kt, ky)).copy_from(&acc);
        off += kt;
    }
    Ok(ahat)
}

/// Builds the compressed induced column basis of `X·Y` by running the row
/// algorithm for `Yᵀ Xᵀ`. `zxt` are the total weights of `Xᵀ` and `pyx`
/// the products `V_{Y,s}ᵀ W_{X,s}`. Matrices `a` are indexed by block ids
/// of `Y`.
pub fn compress_induced_col_basis(
    x: &H2Matrix,
    y: &H2Matrix,
    zxt: &TotalWeights,
    pyx: &BasisProduct,
    opts: &CompressionOptions,
) -> Result<InducedBasis> {
    compress_row(&MatrixView::transpose_of(y), &MatrixView::transpose_of(x), zxt, pyx, opts)
}

/// Weights and basis products used by the row basis.
pub fn row_inputs(x: &H2Matrix, y: &H2Matrix, scaling: bool) -> Result<(TotalWeights, BasisProduct)> {
    let zy = total_weights(y, &basis_weights(&y.col_basis), scaling);
    let pxy = cluster_basis_product(&x.col_basis, &y.row_basis)?;
    Ok((zy, pxy))
}

/// Weights and basis products used by the column basis.
pub fn col_inputs(x: &H2Matrix, y: &H2Matrix, scaling: bool) -> Result<(TotalWeights, BasisProduct)> {
    let zxt = total_weights_of(&MatrixView::transpose_of(x), &basis_weights(&x.row_basis), scaling);
    let pyx = cluster_basis_product(&y.row_basis, &x.col_basis)?;
    Ok((zxt, pyx))
}

/// Assembles `X·Y` on the product block tree in the bases `row.q` and
/// `col.q`. `pxy` are the products `W_{X,s}ᵀ V_{Y,s}`.
pub fn assemble_product(
    x: &H2Matrix,
    y: &H2Matrix,
    row: &InducedBasis,
    col: &InducedBasis,
    pxy: &BasisProduct,
) -> Result<H2Matrix> {
    let (ra, ca) = (Condensed::Borrowed(&row.a), Condensed::Borrowed(&col.a));
    assemble(x, y, (&row.q, &row.r, ra), (&col.q, &col.r, ca), pxy)
}

/// [`assemble_product`] that releases the condensed blocks of `row` and
/// `col` as soon as they are no longer needed.
pub fn assemble_product_owned(
    x: &H2Matrix,
    y: &H2Matrix,
    row: InducedBasis,
    col: InducedBasis,
    pxy: &BasisProduct,
) -> Result<H2Matrix> {
    let (ra, ca) = (Condensed::Owned(row.a), Condensed::Owned(col.a));
    assemble(x, y, (&row.q, &row.r, ra), (&col.q, &col.r, ca), pxy)
}

enum Condensed<'a> {
    Borrowed(&'a [Option<Matrix>]),
    Owned(Vec<Option<Matrix>>),
}

impl Condensed<'_> {
    fn get(&self, b: usize) -> Result<&Matrix> {
        let m = match self {
            Condensed::Borrowed(v) => v[b].as_ref(),
            Condensed::Owned(v) => v[b].as_ref(),
        };
        m.ok_or_else(|| missing(b))
    }

    /// Drops the matrix of block `b` and returns the number of bytes freed.
    fn release(&mut self, b: usize) -> usize {
        match self {
            Condensed::Owned(v) => v[b].take().map_or(0, |m| m.len() * std::mem::size_of::<f64>()),
            Condensed::Borrowed(_) => 0,
        }
    }
}

/// Released condensed blocks between two heap trims.
const TRIM_BYTES: usize = 32 << 20;

/// Blocks of `bt` grouped by the level of their row cluster.
fn blocks_by_level(bt: &BlockTree) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for b in 0..bt.len() {
        let l = bt.rows.node(bt.node(b).row).level;
        if out.len() <= l {
            out.resize_with(l + 1, Vec::new);
        }
        out[l].push(b);
    }
    out
}

/// The terminal triples `(t, s, r)` are collected first and then processed
/// level by level. Within a level they are grouped by the middle cluster
/// `s`, so the products of couplings with basis changes are formed once per
/// block and dropped with the group. Accumulated couplings of subdivided
/// blocks are handed to their children at the end of their level.
fn assemble(
    x: &H2Matrix,
    y: &H2Matrix,
    (rq, rr, mut ra): (&ClusterBasis, &[Matrix], Condensed),
    (cq, cr, mut ca): (&ClusterBasis, &[Matrix], Condensed),
    pxy: &BasisProduct,
) -> Result<H2Matrix> {
    let (xt, yt) = (&*x.blocks, &*y.blocks);
    check_factors(xt, yt)?;
    let txy = Arc::new(build_product_block_tree(xt, yt)?);
    let by_level = blocks_by_level(&txy);
    let mut levels = terminal_triples(xt, yt, &txy)?;
    levels.resize_with(by_level.len(), Vec::new);

    // admissible leaves accumulate in `coupling`, all other blocks in
    // `pending`; storage is allocated on first use
    let mut coupling: Vec<Option<Matrix>> = vec![None; txy.len()];
    let mut nearfield: Vec<Option<Matrix>> = vec![None; txy.len()];
    let mut pending: Vec<Option<Matrix>> = vec![None; txy.len()];
    let mut released = 0;
    for (mut triples, blocks) in levels.into_iter().zip(by_level) {
        triples.sort_unstable_by_key(|tr| (xt.node(tr.x).col, tr.x, tr.y));
        for group in triples.chunk_by(|a, b| xt.node(a.x).col == xt.node(b.x).col) {
            let s = xt.node(group[0].x).col;
            // `S_{Y,sr} R_rᵀ` for the admissible blocks of Y in this group
            let mut yr: Vec<(usize, Matrix)> = Vec::new();
            for tr in group {
                if yt.kind(tr.y) == BlockKind::Admissible && yr.iter().all(|e| e.0 != tr.y) {
                    yr.push((tr.y, y.coupling_matrix(tr.y) * cr[yt.node(tr.y).col].transpose()));
                }
            }
            let find_yr = |b: usize| yr.iter().find(|e| e.0 == b).map(|e| &e.1).ok_or_else(|| missing(b));
            for run in group.chunk_by(|a, b| a.x == b.x) {
                let xb = run[0].x;
                // `R_t S_{X,ts}` and `R_t S_{X,ts} P_s` for an admissible block of X
                let (xl, xlp) = if xt.kind(xb) == BlockKind::Admissible {
                    let xl = &rr[xt.node(xb).row] * x.coupling_matrix(xb);
                    let xlp = &xl * &pxy.p[s];
                    (Some(xl), Some(xlp))
                } else {
                    (None, None)
                };
                for tr in run {
                    let target =
                        if txy.kind(tr.g) == BlockKind::Admissible { &mut coupling[tr.g] } else { &mut pending[tr.g] };
                    match (xt.kind(xb), yt.kind(tr.y)) {
                        (BlockKind::Admissible, BlockKind::Admissible) => {
                            add_product(target, xlp.as_ref().ok_or_else(|| missing(xb))?, find_yr(tr.y)?)
                        }
                        (_, BlockKind::Admissible) => add_product(target, ra.get(xb)?, find_yr(tr.y)?),
                        (BlockKind::Admissible, _) => {
                            let left = xl.as_ref().ok_or_else(|| missing(xb))?;
                            add_product(target, left, &ca.get(tr.y)?.transpose());
                        }
                        _ => add_product(&mut nearfield[tr.g], x.dense_block(xb), y.dense_block(tr.y)),
                    }
                }
                // every use of `xb` lies in this run, every use of `(s, r)` in
                // this group
                released += ra.release(xb);
            }
            for tr in group {
                released += ca.release(tr.y);
            }
            if released > TRIM_BYTES {
                crate::util::trim_heap();
                released = 0;
            }
        }

        for b in blocks {
            let Some(s) = pending[b].take() else { continue };
            let node = txy.node(b);
            if node.kind == BlockKind::Inadmissible {
                let left = rq.leaf_matrix(node.row) * s;
                add_product(&mut nearfield[b], &left, &cq.leaf_matrix(node.col).transpose());
                continue;
            }
            for &c in txy.children(b) {
                let cn = txy.node(c);
                let left = rq.transfer_matrix(cn.row) * &s;
                let target = if txy.kind(c) == BlockKind::Admissible { &mut coupling[c] } else { &mut pending[c] };
                add_product(target, &left, &cq.transfer_matrix(cn.col).transpose());
            }
        }
    }

    let mut g = H2Matrix { blocks: txy.clone(), row_basis: rq.clone(), col_basis: cq.clone(), coupling, nearfield };
    for b in 0..txy.len() {
        let node = txy.node(b);
        match node.kind {
            BlockKind::Admissible if g.coupling[b].is_none() => {
                g.coupling[b] = Some(Matrix::zeros(rq.rank(node.row), cq.rank(node.col)))
            }
            BlockKind::Inadmissible if g.nearfield[b].is_none() => {
                g.nearfield[b] = Some(Matrix::zeros(txy.rows.node(node.row).size(), txy.cols.node(node.col).size()))
            }
            _ => {}
        }
    }
    g.validate()?;
    Ok(g)
}

/// Blocks `X|_{t̂×ŝ}`, `Y|_{ŝ×r̂}` that are multiplied directly, with the
/// product block `(t, r)` receiving the result.
#[derive(Clone, Copy, Debug)]
struct Triple {
    x: usize,
    y: usize,
    g: usize,
}

/// Terminal triples of the recursive block product, grouped by level.
fn terminal_triples(xt: &BlockTree, yt: &BlockTree, txy: &BlockTree) -> Result<Vec<Vec<Triple>>> {
    let mut levels: Vec<Vec<Triple>> = Vec::new();
    let mut stack = vec![Triple { x: xt.root(), y: yt.root(), g: txy.root() }];
    while let Some(tr) = stack.pop() {
        match (xt.kind(tr.x), yt.kind(tr.y)) {
            (BlockKind::Internal, BlockKind::Internal) => {
                let (t, s, r) = (xt.node(tr.x).row, xt.node(tr.x).col, yt.node(tr.y).col);
                for &t1 in xt.rows.children(t) {
                    for &s1 in xt.cols.children(s) {
                        for &r1 in yt.cols.children(r) {
                            let (Some(x), Some(y), Some(g)) = (xt.find(t1, s1), yt.find(s1, r1), txy.find(t1, r1))
                            else {
                                return Err(H2Error::Structure(format!("missing block in triple ({t1}, {s1}, {r1})")));
                            };
                            stack.push(Triple { x, y, g });
                        }
                    }
                }
            }
            (BlockKind::Inadmissible, BlockKind::Internal) | (BlockKind::Internal, BlockKind::Inadmissible) => {
                return Err(H2Error::Structure(format!("blocks {} and {} cannot be multiplied", tr.x, tr.y)));
            }
            _ => {
                let l = xt.rows.node(xt.node(tr.x).row).level;
                if levels.len() <= l {
                    levels.resize_with(l + 1, Vec::new);
                }
                levels[l].push(tr);
            }
        }
    }
    Ok(levels)
}

/// `slot += a b`.
fn add_product(slot: &mut Option<Matrix>, a: &Matrix, b: &Matrix) {
    match slot {
        Some(acc) => acc.gemm(1.0, a, b, 1.0),
        None => *slot = Some(a * b),
    }
}

fn missing(b: usize) -> H2Error {
    H2Error::Structure(format!("no condensed matrix for block {b}"))
}

/// Phase 1 in one call: weights, both induced bases and the assembled
/// product.
pub fn induced_product(x: &H2Matrix, y: &H2Matrix, opts: &CompressionOptions) -> Result<H2Matrix> {
    let (zy, pxy) = row_inputs(x, y, opts.scaling)?;
    let row = compress_induced_row_basis(x, y, &zy, &pxy, opts)?;
    let (zxt, pyx) = col_inputs(x, y, opts.scaling)?;
    let col = compress_induced_col_basis(x, y, &zxt, &pyx, opts)?;
    drop((zy, zxt, pyx));
    assemble_product_owned(x, y, row, col, &pxy)
}
