use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use super::basis::{orthogonalize_basis, ClusterBasis};
use crate::dense::Matrix;
use crate::error::{H2Error, Result};
use crate::trees::{BlockKind, BlockTree};

/// Largest dimension accepted by [`H2Matrix::to_dense`].
pub const DENSE_LIMIT: usize = 16384;

/// H²-matrix: block tree, row and column bases, coupling matrices on
/// admissible leaves and dense blocks on inadmissible leaves.
///
/// Matrices are indexed by block id. All vectors and dense conversions use
/// the permuted order of the row and column cluster trees.
#[derive(Clone, Debug)]
pub struct H2Matrix {
    pub blocks: Arc<BlockTree>,
    pub row_basis: ClusterBasis,
    pub col_basis: ClusterBasis,
    pub coupling: Vec<Option<Matrix>>,
    pub nearfield: Vec<Option<Matrix>>,
}

impl H2Matrix {
    /// Checked constructor.
    pub fn new(
        blocks: Arc<BlockTree>,
        row_basis: ClusterBasis,
        col_basis: ClusterBasis,
        coupling: Vec<Option<Matrix>>,
        nearfield: Vec<Option<Matrix>>,
    ) -> Result<Self> {
        let g = Self { blocks, row_basis, col_basis, coupling, nearfield };
        g.validate()?;
        Ok(g)
    }

    /// Zero matrix over `blocks` with the given bases.
    pub fn zero(blocks: Arc<BlockTree>, row_basis: ClusterBasis, col_basis: ClusterBasis) -> Self {
        let mut coupling = vec![None; blocks.len()];
        let mut nearfield = vec![None; blocks.len()];
        for b in 0..blocks.len() {
            let node = blocks.node(b);
            match node.kind {
                BlockKind::Admissible => {
                    coupling[b] =
                        Some(Matrix::zeros(row_basis.rank(node.row), col_basis.rank(node.col)))
                }
                BlockKind::Inadmissible => {
                    nearfield[b] = Some(Matrix::zeros(
                        blocks.rows.node(node.row).size(),
                        blocks.cols.node(node.col).size(),
                    ))
                }
                BlockKind::Internal => {}
            }
        }
        Self { blocks, row_basis, col_basis, coupling, nearfield }
    }

    /// Random matrix with random bases of constant rank `k`; entries of all
    /// stored matrices are uniform in `[-1, 1]`.
    pub fn random<R: Rng>(blocks: Arc<BlockTree>, k: usize, rng: &mut R) -> Self {
        let row_basis = ClusterBasis::random(blocks.rows.clone(), k, rng);
        let col_basis = ClusterBasis::random(blocks.cols.clone(), k, rng);
        let mut g = Self::zero(blocks, row_basis, col_basis);
        for m in g.coupling.iter_mut().chain(g.nearfield.iter_mut()).flatten() {
            m.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        let bt = &self.blocks;
        if !self.row_basis.tree.same_structure(&bt.rows) || !self.col_basis.tree.same_structure(&bt.cols) {
            return Err(H2Error::Structure("bases do not match the block tree".into()));
        }
        if self.coupling.len() != bt.len() || self.nearfield.len() != bt.len() {
            return Err(H2Error::Structure("matrix arrays do not match the block tree".into()));
        }
        for b in 0..bt.len() {
            let node = bt.node(b);
            let (kt, ks) = (self.row_basis.rank(node.row), self.col_basis.rank(node.col));
            let (nt, ns) = (bt.rows.node(node.row).size(), bt.cols.node(node.col).size());
            let ok = match node.kind {
                BlockKind::Admissible => {
                    self.nearfield[b].is_none()
                        && self.coupling[b].as_ref().is_some_and(|s| s.shape() == (kt, ks))
                }
                BlockKind::Inadmissible => {
                    self.coupling[b].is_none()
                        && self.nearfield[b].as_ref().is_some_and(|d| d.shape() == (nt, ns))
                }
                BlockKind::Internal => self.coupling[b].is_none() && self.nearfield[b].is_none(),
            };
            if !ok {
                return Err(H2Error::Structure(format!("block {b}: missing or mis-sized matrix")));
            }
        }
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.blocks.rows.size()
    }

    pub fn ncols(&self) -> usize {
        self.blocks.cols.size()
    }

    pub fn coupling_matrix(&self, b: usize) -> &Matrix {
        self.coupling[b].as_ref().expect("coupling matrix of an admissible leaf")
    }

    pub fn dense_block(&self, b: usize) -> &Matrix {
        self.nearfield[b].as_ref().expect("dense matrix of an inadmissible leaf")
    }

    /// `y ← y + α G x`.
    pub fn matvec(&self, alpha: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.ncols() {
            return Err(H2Error::DimensionMismatch { expected: self.ncols(), got: x.len() });
        }
        if y.len() != self.nrows() {
            return Err(H2Error::DimensionMismatch { expected: self.nrows(), got: y.len() });
        }
        self.apply(alpha, x, y, false);
        Ok(())
    }

    /// `y ← y + α Gᵀ x`.
    pub fn matvec_adjoint(&self, alpha: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.nrows() {
            return Err(H2Error::DimensionMismatch { expected: self.nrows(), got: x.len() });
        }
        if y.len() != self.ncols() {
            return Err(H2Error::DimensionMismatch { expected: self.ncols(), got: y.len() });
        }
        self.apply(alpha, x, y, true);
        Ok(())
    }

    fn apply(&self, alpha: f64, x: &[f64], y: &mut [f64], adjoint: bool) {
        let (src, dst) = if adjoint {
            (&self.row_basis, &self.col_basis)
        } else {
            (&self.col_basis, &self.row_basis)
        };
        let xh = src.forward(x);
        let mut yh: Vec<DVector<f64>> =
            dst.ranks.iter().map(|&k| DVector::zeros(k)).collect();
        let bt = &self.blocks;
        for b in 0..bt.len() {
            let node = bt.node(b);
            match node.kind {
                BlockKind::Admissible => {
                    let s = self.coupling_matrix(b);
                    if adjoint {
                        yh[node.col] += s.tr_mul(&xh[node.row]) * alpha;
                    } else {
                        yh[node.row] += s * &xh[node.col] * alpha;
                    }
                }
                BlockKind::Inadmissible => {
                    let d = self.dense_block(b);
                    let (rt, rs) = (bt.rows.range(node.row), bt.cols.range(node.col));
                    if adjoint {
                        let add = d.tr_mul(&DVector::from_column_slice(&x[rt]));
                        for (yi, a) in y[rs].iter_mut().zip(add.iter()) {
                            *yi += alpha * a;
                        }
                    } else {
                        let add = d * DVector::from_column_slice(&x[rs]);
                        for (yi, a) in y[rt].iter_mut().zip(add.iter()) {
                            *yi += alpha * a;
                        }
                    }
                }
                BlockKind::Internal => {}
            }
        }
        dst.backward(yh, y);
    }

    /// Multiply-adds of one matrix-vector product.
    pub fn matvec_flops(&self) -> usize {
        let stored: usize = self.coupling.iter().chain(&self.nearfield).flatten().map(|m| m.len()).sum();
        stored + self.row_basis.transform_flops() + self.col_basis.transform_flops()
    }

    /// Stored scalars in bases, couplings and dense blocks.
    pub fn storage(&self) -> usize {
        let blocks: usize = self.coupling.iter().chain(&self.nearfield).flatten().map(|m| m.len()).sum();
        blocks + self.row_basis.storage() + self.col_basis.storage()
    }

    /// Approximate memory footprint in bytes.
    pub fn memory_bytes(&self) -> usize {
        self.storage() * std::mem::size_of::<f64>()
    }

    /// Explicit `#t̂ × #ŝ` matrix of block `b`.
    pub fn block_dense(&self, b: usize) -> Matrix {
        let bt = &self.blocks;
        let node = bt.node(b);
        let (nt, ns) = (bt.rows.node(node.row).size(), bt.cols.node(node.col).size());
        match node.kind {
            BlockKind::Admissible => {
                self.row_basis.expand(node.row)
                    * self.coupling_matrix(b)
                    * self.col_basis.expand(node.col).transpose()
            }
            BlockKind::Inadmissible => self.dense_block(b).clone(),
            BlockKind::Internal => {
                let (r0, c0) = (bt.rows.node(node.row).range.start, bt.cols.node(node.col).range.start);
                let mut out = Matrix::zeros(nt, ns);
                for &c in bt.children(b) {
                    let child = bt.node(c);
                    let sub = self.block_dense(c);
                    let off = (bt.rows.node(child.row).range.start - r0, bt.cols.node(child.col).range.start - c0);
                    out.view_mut(off, sub.shape()).copy_from(&sub);
                }
                out
            }
        }
    }

    /// Dense matrix in tree order; refused above [`DENSE_LIMIT`].
    pub fn to_dense(&self) -> Result<Matrix> {
        let n = self.nrows().max(self.ncols());
        if n > DENSE_LIMIT {
            return Err(H2Error::TooLarge { n, limit: DENSE_LIMIT });
        }
        Ok(self.block_dense(self.blocks.root()))
    }

    /// `Gᵀ` with the same block ids.
    pub fn transpose(&self) -> Self {
        let tr = |v: &Vec<Option<Matrix>>| v.iter().map(|m| m.as_ref().map(|m| m.transpose())).collect();
        Self {
            blocks: Arc::new(self.blocks.transpose()),
            row_basis: self.col_basis.clone(),
            col_basis: self.row_basis.clone(),
            coupling: tr(&self.coupling),
            nearfield: tr(&self.nearfield),
        }
    }

    /// The same matrix in isometric row and column bases, with couplings
    /// `R_t S_b R_sᵀ`.
    pub fn orthogonalize(&self) -> Self {
        self.clone().into_orthogonal()
    }

    /// [`Self::orthogonalize`] replacing the couplings in place.
    pub fn into_orthogonal(mut self) -> Self {
        let (row_basis, rr) = orthogonalize_basis(&self.row_basis);
        let (col_basis, rc) = orthogonalize_basis(&self.col_basis);
        for b in 0..self.blocks.len() {
            if let Some(s) = self.coupling[b].take() {
                let node = self.blocks.node(b);
                self.coupling[b] = Some(&rr[node.row] * s * rc[node.col].transpose());
            }
        }
        self.row_basis = row_basis;
        self.col_basis = col_basis;
        self
    }
}

/// Reorders a matrix given in original index order into tree order.
pub fn permute_dense(a: &Matrix, row_perm: &[usize], col_perm: &[usize]) -> Matrix {
    Matrix::from_fn(row_perm.len(), col_perm.len(), |i, j| a[(row_perm[i], col_perm[j])])
}
