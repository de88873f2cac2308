use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use crate::dense::{left_singular_vectors, vstack, Matrix, Truncation};
use crate::error::{H2Error, Result};
use crate::trees::ClusterTree;

/// Nested cluster basis.
///
/// Leaves store `V_t` (`#t̂ × k_t`) explicitly; every non-root cluster `t'`
/// stores its transfer matrix `E_{t'}` (`k_{t'} × k_{parent}`) so that
/// `V_t|_{t̂'} = V_{t'} E_{t'}`.
#[derive(Clone, Debug)]
pub struct ClusterBasis {
    pub tree: Arc<ClusterTree>,
    pub ranks: Vec<usize>,
    pub leaf: Vec<Option<Matrix>>,
    pub transfer: Vec<Option<Matrix>>,
}

impl ClusterBasis {
    /// Checked constructor.
    pub fn new(
        tree: Arc<ClusterTree>,
        ranks: Vec<usize>,
        leaf: Vec<Option<Matrix>>,
        transfer: Vec<Option<Matrix>>,
    ) -> Result<Self> {
        let basis = Self { tree, ranks, leaf, transfer };
        basis.validate()?;
        Ok(basis)
    }

    /// Basis with all ranks zero.
    pub fn empty(tree: Arc<ClusterTree>) -> Self {
        let n = tree.len();
        let leaf = (0..n)
            .map(|t| tree.is_leaf(t).then(|| Matrix::zeros(tree.node(t).size(), 0)))
            .collect();
        let transfer = (0..n).map(|t| tree.node(t).parent.map(|_| Matrix::zeros(0, 0))).collect();
        Self { tree, ranks: vec![0; n], leaf, transfer }
    }

    /// Random basis with constant rank `k` and entries uniform in `[-1, 1]`.
    pub fn random<R: Rng>(tree: Arc<ClusterTree>, k: usize, rng: &mut R) -> Self {
        let n = tree.len();
        let mut gen = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let mut leaf = Vec::with_capacity(n);
        let mut transfer = Vec::with_capacity(n);
        for t in 0..n {
            leaf.push(tree.is_leaf(t).then(|| gen(tree.node(t).size(), k)));
            transfer.push(tree.node(t).parent.map(|_| gen(k, k)));
        }
        Self { tree, ranks: vec![k; n], leaf, transfer }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tree.len();
        if self.ranks.len() != n || self.leaf.len() != n || self.transfer.len() != n {
            return Err(H2Error::Structure("basis arrays do not match the cluster tree".into()));
        }
        for t in 0..n {
            let k = self.ranks[t];
            let node = self.tree.node(t);
            match (&self.leaf[t], node.is_leaf()) {
                (Some(v), true) if v.shape() == (node.size(), k) => {}
                (None, false) => {}
                _ => {
                    return Err(H2Error::Structure(format!("cluster {t}: bad leaf matrix")));
                }
            }
            match (&self.transfer[t], node.parent) {
                (Some(e), Some(p)) if e.shape() == (k, self.ranks[p]) => {}
                (None, None) => {}
                _ => {
                    return Err(H2Error::Structure(format!("cluster {t}: bad transfer matrix")));
                }
            }
        }
        Ok(())
    }

    pub fn rank(&self, t: usize) -> usize {
        self.ranks[t]
    }

    pub fn max_rank(&self) -> usize {
        self.ranks.iter().copied().max().unwrap_or(0)
    }

    pub fn avg_rank(&self) -> f64 {
        self.ranks.iter().sum::<usize>() as f64 / self.ranks.len().max(1) as f64
    }

    pub fn leaf_matrix(&self, t: usize) -> &Matrix {
        self.leaf[t].as_ref().expect("leaf matrix of a leaf cluster")
    }

    pub fn transfer_matrix(&self, t: usize) -> &Matrix {
        self.transfer[t].as_ref().expect("transfer matrix of a non-root cluster")
    }

    /// Number of stored scalars.
    pub fn storage(&self) -> usize {
        self.leaf.iter().chain(&self.transfer).flatten().map(|m| m.len()).sum()
    }

    /// Explicit `V_t` (`#t̂ × k_t`).
    pub fn expand(&self, t: usize) -> Matrix {
        if let Some(v) = &self.leaf[t] {
            return v.clone();
        }
        let node = self.tree.node(t);
        let mut out = Matrix::zeros(node.size(), self.ranks[t]);
        for &c in &node.children {
            let off = self.tree.offset_in_parent(c);
            let vc = self.expand(c) * self.transfer_matrix(c);
            out.view_mut((off, 0), vc.shape()).copy_from(&vc);
        }
        out
    }

    /// `V_tᵀ V_t` for every cluster, computed by the transfer recursion.
    pub fn gram(&self) -> Vec<Matrix> {
        let n = self.tree.len();
        let mut g: Vec<Matrix> = vec![Matrix::zeros(0, 0); n];
        for t in (0..n).rev() {
            g[t] = match &self.leaf[t] {
                Some(v) => v.tr_mul(v),
                None => {
                    let k = self.ranks[t];
                    let mut acc = Matrix::zeros(k, k);
                    for &c in self.tree.children(t) {
                        let e = self.transfer_matrix(c);
                        acc += e.tr_mul(&(&g[c] * e));
                    }
                    acc
                }
            };
        }
        g
    }

    /// Largest `‖V_tᵀV_t − I‖_F` over all clusters.
    pub fn isometry_defect(&self) -> f64 {
        self.gram()
            .iter()
            .map(|g| (g - Matrix::identity(g.nrows(), g.ncols())).norm())
            .fold(0.0, f64::max)
    }

    /// Forward transformation `x̂_t = V_tᵀ x|_{t̂}` for all clusters.
    pub fn forward(&self, x: &[f64]) -> Vec<DVector<f64>> {
        let n = self.tree.len();
        let mut xh: Vec<DVector<f64>> = vec![DVector::zeros(0); n];
        for t in (0..n).rev() {
            xh[t] = match &self.leaf[t] {
                Some(v) => {
                    let r = self.tree.range(t);
                    v.tr_mul(&DVector::from_column_slice(&x[r]))
                }
                None => {
                    let mut acc = DVector::zeros(self.ranks[t]);
                    for &c in self.tree.children(t) {
                        acc += self.transfer_matrix(c).tr_mul(&xh[c]);
                    }
                    acc
                }
            };
        }
        xh
    }

    /// Backward transformation: `y|_{t̂} += V_t ŷ_t` for all clusters.
    /// `yh` is consumed as scratch space.
    pub fn backward(&self, mut yh: Vec<DVector<f64>>, y: &mut [f64]) {
        for t in 0..self.tree.len() {
            if let Some(v) = &self.leaf[t] {
                let r = self.tree.range(t);
                let add = v * &yh[t];
                for (yi, a) in y[r].iter_mut().zip(add.iter()) {
                    *yi += a;
                }
            } else {
                for &c in self.tree.children(t) {
                    let add = self.transfer_matrix(c) * &yh[t];
                    yh[c] += add;
                }
            }
        }
    }

    /// Multiply-adds of one forward (or backward) transformation.
    pub fn transform_flops(&self) -> usize {
        self.leaf.iter().chain(&self.transfer).flatten().map(|m| m.len()).sum()
    }
}

/// Per-cluster products `P_s = W_sᵀ V_s` of two bases over the same tree.
#[derive(Clone, Debug)]
pub struct BasisProduct {
    pub p: Vec<Matrix>,
}

/// `P_s = W_sᵀ V_s` for all clusters, by the transfer recursion.
pub fn cluster_basis_product(w: &ClusterBasis, v: &ClusterBasis) -> Result<BasisProduct> {
    if !w.tree.same_structure(&v.tree) {
        return Err(H2Error::InvalidInput("cluster bases live on different trees".into()));
    }
    let n = w.tree.len();
    let mut p: Vec<Matrix> = vec![Matrix::zeros(0, 0); n];
    for s in (0..n).rev() {
        p[s] = if w.tree.is_leaf(s) {
            w.leaf_matrix(s).tr_mul(v.leaf_matrix(s))
        } else {
            let mut acc = Matrix::zeros(w.ranks[s], v.ranks[s]);
            for &c in w.tree.children(s) {
                acc += w.transfer_matrix(c).tr_mul(&(&p[c] * v.transfer_matrix(c)));
            }
            acc
        };
    }
    Ok(BasisProduct { p })
}

/// Isometric basis `Q` spanning the same spaces, together with the
/// basis-change matrices `R_t` with `V_t = Q_t R_t`. Numerically rank
/// deficient clusters get reduced ranks.
pub fn orthogonalize_basis(basis: &ClusterBasis) -> (ClusterBasis, Vec<Matrix>) {
    let tree = basis.tree.clone();
    let n = tree.len();
    let mut q = ClusterBasis::empty(tree.clone());
    let mut r: Vec<Matrix> = vec![Matrix::zeros(0, 0); n];
    for t in (0..n).rev() {
        let vhat = match &basis.leaf[t] {
            Some(v) => v.clone(),
            None => {
                let parts: Vec<Matrix> =
                    tree.children(t).iter().map(|&c| &r[c] * basis.transfer_matrix(c)).collect();
                let refs: Vec<&Matrix> = parts.iter().collect();
                vstack(&refs, basis.ranks[t])
            }
        };
        let (u, _) = left_singular_vectors(&vhat, Truncation::absolute(0.0));
        r[t] = u.tr_mul(&vhat);
        q.ranks[t] = u.ncols();
        if tree.is_leaf(t) {
            q.leaf[t] = Some(u);
        } else {
            let mut off = 0;
            for &c in tree.children(t) {
                let kc = q.ranks[c];
                q.transfer[c] = Some(u.rows(off, kc).into_owned());
                off += kc;
            }
        }
    }
    (q, r)
}
