//! Basis weights and total weights.
//!
//! Basis weights `R_r` satisfy `W_r = Q_r R_r` with isometric `Q_r`; total
//! weights `Z_s` condense all admissible blocks of a matrix that involve the
//! row cluster `s` or one of its ancestors into at most `k_s` rows.

use crate::dense::{qr_r_factor, spectral_norm, vstack, Matrix};
use crate::h2::{ClusterBasis, H2Matrix, MatrixView};
use crate::trees::BlockKind;

#[derive(Clone, Debug)]
pub struct BasisWeights {
    pub r: Vec<Matrix>,
}

/// Bottom-up computation of the basis weights of `w`.
pub fn basis_weights(w: &ClusterBasis) -> BasisWeights {
    let tree = &w.tree;
    let n = tree.len();
    let mut r: Vec<Matrix> = vec![Matrix::zeros(0, 0); n];
    for t in (0..n).rev() {
        r[t] = match &w.leaf[t] {
            Some(v) => qr_r_factor(v),
            None => {
                let parts: Vec<Matrix> =
                    tree.children(t).iter().map(|&c| &r[c] * w.transfer_matrix(c)).collect();
                let refs: Vec<&Matrix> = parts.iter().collect();
                qr_r_factor(&vstack(&refs, w.rank(t)))
            }
        };
    }
    BasisWeights { r }
}

#[derive(Clone, Debug)]
pub struct TotalWeights {
    pub z: Vec<Matrix>,
}

impl TotalWeights {
    pub fn max_rows(&self) -> usize {
        self.z.iter().map(|z| z.nrows()).max().unwrap_or(0)
    }
}

/// Weighted row `R_{Y,r} S_{Y,sr}ᵀ` of the admissible block `b = (s, r)`,
/// divided by its spectral norm when `scaling` is set. Zero blocks give
/// `None`.
pub fn block_weight_row(y: &H2Matrix, rw: &BasisWeights, b: usize, scaling: bool) -> Option<Matrix> {
    weight_row(&MatrixView::plain(y), rw, b, scaling)
}

fn weight_row(y: &MatrixView, rw: &BasisWeights, b: usize, scaling: bool) -> Option<Matrix> {
    let node = y.blocks.node(b);
    let row = &rw.r[node.col] * y.coupling_t(b).as_ref();
    if !scaling {
        return Some(row);
    }
    let norm = spectral_norm(&row);
    (norm > 0.0).then(|| row / norm)
}

/// Top-down computation of the total weights of `y` for its row basis;
/// `rw` are the basis weights of the column basis of `y`.
pub fn total_weights(y: &H2Matrix, rw: &BasisWeights, scaling: bool) -> TotalWeights {
    total_weights_of(&MatrixView::plain(y), rw, scaling)
}

/// [`total_weights`] of a possibly transposed matrix.
pub fn total_weights_of(y: &MatrixView, rw: &BasisWeights, scaling: bool) -> TotalWeights {
    let bt = &y.blocks;
    let tree = &bt.rows;
    let basis = y.row_basis();
    let n = tree.len();
    let mut z: Vec<Matrix> = vec![Matrix::zeros(0, 0); n];
    for s in 0..n {
        let k = basis.rank(s);
        let mut parts: Vec<Matrix> = Vec::new();
        if let Some(p) = tree.node(s).parent {
            parts.push(&z[p] * basis.transfer_matrix(s).transpose());
        }
        for &b in bt.row_blocks(s) {
            if bt.kind(b) == BlockKind::Admissible {
                parts.extend(weight_row(y, rw, b, scaling));
            }
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        z[s] = qr_r_factor(&vstack(&refs, k));
    }
    TotalWeights { z }
}
