//! Small dense matrices: Householder QR, truncated SVD and spectral norms.
//!
//! All matrices are column-major `nalgebra::DMatrix<f64>`. Empty matrices
//! (zero rows or zero columns) are legal everywhere and behave like zero
//! matrices in products.

use nalgebra::DMatrix;

use crate::error::{H2Error, Result};

/// Dense column-major matrix of `f64`.
pub type Matrix = DMatrix<f64>;

/// Thin QR factorization `a = q * r`.
#[derive(Clone, Debug)]
pub struct ThinQr {
    /// Isometric factor, `rows x min(rows, cols)`.
    pub q: Matrix,
    /// Upper trapezoidal factor, `min(rows, cols) x cols`.
    pub r: Matrix,
}

/// Householder QR stored in compact form.
///
/// Reflector `j` is `I - beta_j v_j v_jᵀ` with `v_j[j] = 1` and the entries
/// below the diagonal of column `j` of `packed`. The upper triangle of
/// `packed` holds `R`.
#[derive(Clone, Debug)]
pub struct Householder {
    packed: Matrix,
    betas: Vec<f64>,
}

impl Householder {
    pub fn new(mut a: Matrix) -> Self {
        let (m, n) = a.shape();
        let l = m.min(n);
        let mut betas = Vec::with_capacity(l);
        let data = a.as_mut_slice();
        for j in 0..l {
            let (head, tail) = data.split_at_mut((j + 1) * m);
            let col = &mut head[j * m..];
            let alpha = col[j];
            let sigma: f64 = col[j + 1..].iter().map(|x| x * x).sum();
            if sigma == 0.0 {
                betas.push(0.0);
                continue;
            }
            let mu = (alpha * alpha + sigma).sqrt();
            let v0 = if alpha <= 0.0 { alpha - mu } else { -sigma / (alpha + mu) };
            let beta = 2.0 * v0 * v0 / (sigma + v0 * v0);
            col[j + 1..].iter_mut().for_each(|x| *x /= v0);
            col[j] = mu;
            let v = &col[j + 1..];
            for other in tail.chunks_exact_mut(m) {
                reflect(beta, v, &mut other[j..]);
            }
            betas.push(beta);
        }
        Self { packed: a, betas }
    }

    pub fn rows(&self) -> usize {
        self.packed.nrows()
    }

    /// Number of reflectors, `min(rows, cols)`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Upper trapezoidal factor `R` (`min(m, n) x n`).
    pub fn r(&self) -> Matrix {
        let (_, n) = self.packed.shape();
        let l = self.len();
        Matrix::from_fn(l, n, |i, j| if i <= j { self.packed[(i, j)] } else { 0.0 })
    }

    fn apply_reflector(&self, j: usize, b: &mut Matrix) {
        let beta = self.betas[j];
        if beta == 0.0 {
            return;
        }
        let m = self.rows();
        let v = &self.packed.as_slice()[j * m + j + 1..(j + 1) * m];
        for col in b.as_mut_slice().chunks_exact_mut(m) {
            reflect(beta, v, &mut col[j..]);
        }
    }

    /// `b <- Qᵀ b` with the full orthogonal `m x m` factor.
    pub fn apply_qt(&self, b: &mut Matrix) {
        assert_eq!(b.nrows(), self.rows(), "row mismatch in apply_qt");
        for j in 0..self.len() {
            self.apply_reflector(j, b);
        }
    }

    /// `b <- Q b` with the full orthogonal `m x m` factor.
    pub fn apply_q(&self, b: &mut Matrix) {
        assert_eq!(b.nrows(), self.rows(), "row mismatch in apply_q");
        for j in (0..self.len()).rev() {
            self.apply_reflector(j, b);
        }
    }

    /// First `cols` columns of the full orthogonal factor.
    pub fn q_columns(&self, cols: usize) -> Matrix {
        let m = self.rows();
        let mut q = Matrix::from_fn(m, cols, |i, j| if i == j { 1.0 } else { 0.0 });
        self.apply_q(&mut q);
        q
    }

    pub fn thin_q(&self) -> Matrix {
        self.q_columns(self.len())
    }
}

/// Applies `I - beta (1, v)(1, v)ᵀ` to `x` (`x.len() == v.len() + 1`).
fn reflect(beta: f64, v: &[f64], x: &mut [f64]) {
    let (x0, rest) = x.split_first_mut().expect("non-empty column");
    let w = beta * (*x0 + v.iter().zip(rest.iter()).map(|(a, b)| a * b).sum::<f64>());
    if w == 0.0 {
        return;
    }
    *x0 -= w;
    rest.iter_mut().zip(v).for_each(|(x, v)| *x -= w * v);
}

fn check_finite(a: &Matrix) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(H2Error::InvalidInput("matrix contains non-finite entries".into()))
    }
}

/// Thin Householder QR factorization.
pub fn thin_householder_qr(a: &Matrix) -> Result<ThinQr> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(H2Error::InvalidInput(format!(
            "QR needs at least one row and column, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a)?;
    let h = Householder::new(a.clone());
    Ok(ThinQr { q: h.thin_q(), r: h.r() })
}

/// `R` factor of a thin QR; empty inputs give an empty `0 x cols` result.
pub fn qr_r_factor(a: &Matrix) -> Matrix {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Matrix::zeros(0, a.ncols());
    }
    Householder::new(a.clone()).r()
}

/// How singular values are compared against the tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruncationMode {
    /// Keep `σ_i > tol`.
    Absolute,
    /// Keep `σ_i > tol · σ_1`.
    Relative,
}

const ROUNDOFF_FLOOR: f64 = 64.0 * f64::EPSILON;

/// Rank selection rule for truncated SVDs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub tol: f64,
    pub mode: TruncationMode,
    pub max_rank: Option<usize>,
}

impl Truncation {
    pub fn absolute(tol: f64) -> Self {
        Self { tol, mode: TruncationMode::Absolute, max_rank: None }
    }

    pub fn relative(tol: f64) -> Self {
        Self { tol, mode: TruncationMode::Relative, max_rank: None }
    }

    pub fn with_max_rank(mut self, max_rank: Option<usize>) -> Self {
        self.max_rank = max_rank;
        self
    }

    /// Number of singular values to keep from a non-increasing sequence.
    ///
    /// Values at roundoff level (`≤ 64 ε_mach σ_1`) are always dropped, so a
    /// zero tolerance yields the numerical rank.
    pub fn rank(&self, sigma: &[f64]) -> usize {
        let s1 = sigma.first().copied().unwrap_or(0.0);
        let floor = ROUNDOFF_FLOOR * s1;
        let threshold = match self.mode {
            TruncationMode::Absolute => self.tol,
            TruncationMode::Relative => self.tol * s1,
        }
        .max(floor);
        let k = sigma.iter().take_while(|&&s| s > threshold).count();
        match self.max_rank {
            Some(cap) => k.min(cap),
            None => k,
        }
    }
}

/// Truncated singular value decomposition.
///
/// `sigma` holds all singular values (non-increasing); `u` and `v` hold only
/// the first `retained_rank` singular vectors.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
    pub retained_rank: usize,
}

impl TruncatedSvd {
    /// `u · diag(σ_1..σ_k) · vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let k = self.retained_rank;
        let mut us = self.u.clone();
        for j in 0..k {
            us.column_mut(j).scale_mut(self.sigma[j]);
        }
        us * self.v.transpose()
    }
}

/// Full SVD sorted by decreasing singular values: `(u, sigma, v)` with
/// `min(m, n)` columns each.
fn sorted_svd(a: &Matrix, want_v: bool) -> (Matrix, Vec<f64>, Option<Matrix>) {
    let svd = nalgebra::linalg::SVD::new(a.clone(), true, want_v);
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let u = svd.u.expect("left singular vectors requested");
    let v = svd.v_t.map(|vt| vt.transpose());
    (u, sigma, v)
}

/// Truncated SVD with the given rule; `tol` must be non-negative.
pub fn truncated_svd(a: &Matrix, rule: Truncation) -> Result<TruncatedSvd> {
    if !(rule.tol >= 0.0) {
        return Err(H2Error::InvalidInput(format!("negative truncation tolerance {}", rule.tol)));
    }
    check_finite(a)?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(TruncatedSvd {
            u: Matrix::zeros(m, 0),
            sigma: Vec::new(),
            v: Matrix::zeros(n, 0),
            retained_rank: 0,
        });
    }
    let (u, sigma, v) = sorted_svd(a, true);
    let k = rule.rank(&sigma);
    let v = v.expect("right singular vectors requested");
    Ok(TruncatedSvd {
        u: u.columns(0, k).into_owned(),
        v: v.columns(0, k).into_owned(),
        sigma,
        retained_rank: k,
    })
}

/// Leading left singular vectors of `a` chosen by `rule`, plus all singular
/// values. Wide inputs are first reduced by a QR of the transpose so the SVD
/// acts on a square factor.
pub fn left_singular_vectors(a: &Matrix, rule: Truncation) -> (Matrix, Vec<f64>) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (Matrix::zeros(m, 0), Vec::new());
    }
    let (u, sigma) = if n > m {
        // aᵀ = Q R, so a = Rᵀ Qᵀ has the left singular vectors of Rᵀ.
        let r = Householder::new(a.transpose()).r();
        let (u, s, _) = sorted_svd(&r.transpose(), false);
        (u, s)
    } else {
        let (u, s, _) = sorted_svd(a, false);
        (u, s)
    };
    let k = rule.rank(&sigma);
    (u.columns(0, k).into_owned(), sigma)
}

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    if a.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let gram = if a.nrows() >= a.ncols() { a.tr_mul(a) } else { a * a.transpose() };
    gram.symmetric_eigenvalues().iter().copied().fold(0.0, f64::max).sqrt()
}

/// Lower bound of the spectral norm from a few power iteration steps,
/// started at the column of largest norm. Exact for rank-one matrices.
pub fn spectral_norm_lower_bound(a: &Matrix, steps: usize) -> f64 {
    let Some((j, _)) = a.column_iter().map(|c| c.norm_squared()).enumerate().max_by(|x, y| x.1.total_cmp(&y.1))
    else {
        return 0.0;
    };
    let mut v = a.tr_mul(&a.column(j));
    let mut est = a.column(j).norm();
    for _ in 0..steps {
        let nv = v.norm();
        if nv == 0.0 {
            break;
        }
        v /= nv;
        let u = a * &v;
        est = est.max(u.norm());
        v = a.tr_mul(&u);
    }
    est
}

/// Vertical concatenation; all blocks must share the column count `cols`.
pub fn vstack(blocks: &[&Matrix], cols: usize) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut offset = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.view_mut((offset, 0), (b.nrows(), cols)).copy_from(*b);
        offset += b.nrows();
    }
    out
}

/// Horizontal concatenation; all blocks must share the row count `rows`.
pub fn hstack(blocks: &[&Matrix], rows: usize) -> Matrix {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut offset = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.view_mut((0, offset), (rows, b.ncols())).copy_from(*b);
        offset += b.ncols();
    }
    out
}

/// `‖aᵀa − I‖_F`.
pub fn isometry_defect(a: &Matrix) -> f64 {
    let g = a.tr_mul(a);
    let k = g.nrows();
    (g - Matrix::identity(k, k)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Classical Gram-Schmidt, used only as an independent reference.
    fn gram_schmidt(a: &Matrix) -> (Matrix, Matrix) {
        let (m, n) = a.shape();
        let mut q = Matrix::zeros(m, n);
        let mut r = Matrix::zeros(n, n);
        for j in 0..n {
            let mut v = a.column(j).into_owned();
            for i in 0..j {
                let rij = q.column(i).dot(&a.column(j));
                r[(i, j)] = rij;
                v -= q.column(i) * rij;
            }
            r[(j, j)] = v.norm();
            q.set_column(j, &(v / r[(j, j)]));
        }
        (q, r)
    }

    /// One-sided Jacobi SVD reference: singular values of `a` (m >= n).
    fn jacobi_singular_values(a: &Matrix) -> Vec<f64> {
        let mut u = a.clone();
        let n = u.ncols();
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in p + 1..n {
                    let alpha = u.column(p).norm_squared();
                    let beta = u.column(q).norm_squared();
                    let gamma = u.column(p).dot(&u.column(q));
                    off = off.max(gamma.abs() / (alpha * beta).sqrt().max(1e-300));
                    if gamma.abs() < 1e-300 {
                        continue;
                    }
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..u.nrows() {
                        let up = u[(i, p)];
                        let uq = u[(i, q)];
                        u[(i, p)] = c * up - s * uq;
                        u[(i, q)] = s * up + c * uq;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        let mut s: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    }

    #[test]
    fn qr_of_identity_is_identity() {
        let qr = thin_householder_qr(&Matrix::identity(3, 3)).unwrap();
        assert!((qr.q - Matrix::identity(3, 3)).norm() < 1e-15);
        assert!((qr.r - Matrix::identity(3, 3)).norm() < 1e-15);
    }

    #[test]
    fn qr_matches_gram_schmidt() {
        let a = random(4, 2, 7);
        let qr = thin_householder_qr(&a).unwrap();
        assert!((&qr.q * &qr.r - &a).norm() / a.norm() <= 1e-13);
        let (_, r_gs) = gram_schmidt(&a);
        // same R up to row signs
        for i in 0..2 {
            let sign = (qr.r[(i, i)] * r_gs[(i, i)]).signum();
            for j in 0..2 {
                assert!((qr.r[(i, j)] - sign * r_gs[(i, j)]).abs() < 1e-13);
            }
        }
        assert!(isometry_defect(&qr.q) < 1e-13);
    }

    #[test]
    fn qr_of_zero_matrix() {
        let qr = thin_householder_qr(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(qr.r.norm(), 0.0);
        assert_eq!(qr.q.shape(), (3, 2));
        assert!(isometry_defect(&qr.q) < 1e-15);
    }

    #[test]
    fn qr_rejects_bad_input() {
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(thin_householder_qr(&a).is_err());
        assert!(thin_householder_qr(&Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn full_q_is_orthogonal_and_extends_thin_q() {
        let a = random(6, 3, 11);
        let h = Householder::new(a.clone());
        let q = h.q_columns(6);
        assert!(isometry_defect(&q) < 1e-13);
        let mut qta = a.clone();
        h.apply_qt(&mut qta);
        // rows below the triangle vanish
        for i in 3..6 {
            for j in 0..3 {
                assert!(qta[(i, j)].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn svd_of_rank_one() {
        let x = nalgebra::DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let y = nalgebra::DVector::from_vec(vec![3.0, 4.0]);
        let a = &x * y.transpose();
        let svd = truncated_svd(&a, Truncation::absolute(0.0)).unwrap();
        assert_eq!(svd.retained_rank, 1);
        assert!((svd.sigma[0] - 15.0).abs() < 1e-12);
        let svd = truncated_svd(&a, Truncation::absolute(1e-12)).unwrap();
        assert_eq!(svd.retained_rank, 1);
    }

    #[test]
    fn svd_identity_threshold() {
        let svd = truncated_svd(&Matrix::identity(4, 4), Truncation::absolute(0.5)).unwrap();
        assert_eq!(svd.retained_rank, 4);
        let svd = truncated_svd(&Matrix::identity(4, 4), Truncation::absolute(1.0)).unwrap();
        assert_eq!(svd.retained_rank, 0);
    }

    #[test]
    fn svd_matches_jacobi_reference() {
        let a = random(6, 4, 3);
        let svd = truncated_svd(&a, Truncation::absolute(0.0)).unwrap();
        let reference = jacobi_singular_values(&a);
        for (s, r) in svd.sigma.iter().zip(&reference) {
            assert!((s - r).abs() < 1e-13 * reference[0]);
        }
        assert!((svd.reconstruct() - &a).norm() <= 1e-13 * svd.sigma[0] * 4.0);
        assert!(isometry_defect(&svd.u) < 1e-12);
        assert!(isometry_defect(&svd.v) < 1e-12);
    }

    #[test]
    fn svd_rejects_negative_tolerance() {
        assert!(truncated_svd(&Matrix::identity(2, 2), Truncation::absolute(-1.0)).is_err());
    }

    #[test]
    fn relative_mode_scales_with_sigma1() {
        let a = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![10.0, 1.0, 0.01]));
        let svd = truncated_svd(&a, Truncation::relative(0.05)).unwrap();
        assert_eq!(svd.retained_rank, 2);
        let svd = truncated_svd(&a, Truncation::absolute(0.05).with_max_rank(Some(1))).unwrap();
        assert_eq!(svd.retained_rank, 1);
    }

    #[test]
    fn left_vectors_of_wide_matrix() {
        let a = random(5, 40, 9);
        let (u, sigma) = left_singular_vectors(&a, Truncation::absolute(0.0));
        let reference = jacobi_singular_values(&a.transpose());
        assert_eq!(u.ncols(), 5);
        for (s, r) in sigma.iter().zip(&reference) {
            assert!((s - r).abs() < 1e-12 * reference[0]);
        }
        // projection reproduces a
        let p = &u * u.tr_mul(&a);
        assert!((p - &a).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn spectral_norm_cases() {
        let d = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
        assert!((spectral_norm(&d) - 3.0).abs() < 1e-14);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 3)), 0.0);
        assert_eq!(spectral_norm(&Matrix::zeros(0, 3)), 0.0);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let a = random(5, 3, 21);
        let ata = a.tr_mul(&a);
        let mut v = nalgebra::DVector::from_element(3, 1.0);
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = &ata * &v;
            lambda = w.norm();
            v = w / lambda;
        }
        assert!((spectral_norm(&a) - lambda.sqrt()).abs() < 1e-10);
        let wide = random(3, 17, 5);
        let tall = wide.transpose();
        assert!((spectral_norm(&wide) - spectral_norm(&tall)).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn qr_reconstructs(rows in 1usize..9, cols in 1usize..9, seed in 0u64..1000) {
                let a = random(rows, cols, seed);
                let qr = thin_householder_qr(&a).unwrap();
                prop_assert!((&qr.q * &qr.r - &a).norm() <= 1e-12 * (1.0 + a.norm()));
                prop_assert!(isometry_defect(&qr.q) <= 1e-12);
                for i in 0..qr.r.nrows() {
                    for j in 0..i.min(cols) {
                        prop_assert_eq!(qr.r[(i, j)], 0.0);
                    }
                }
            }

            #[test]
            fn svd_truncation_bound(rows in 1usize..8, cols in 1usize..8, seed in 0u64..1000, tol in 0.0f64..1.0) {
                let a = random(rows, cols, seed);
                let svd = truncated_svd(&a, Truncation::absolute(tol)).unwrap();
                let err = spectral_norm(&(svd.reconstruct() - &a));
                let s1 = svd.sigma[0];
                prop_assert!(err <= tol + 1e-12 * s1.max(1.0));
                prop_assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
                prop_assert!(isometry_defect(&svd.u) <= 1e-12);
                prop_assert!(isometry_defect(&svd.v) <= 1e-12);
            }
        }
    }
}
