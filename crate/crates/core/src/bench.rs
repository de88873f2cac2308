//! Experiment driver: model problem, both multiplication phases, error
//! estimates by power iteration, timings and CSV output.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coarsen::{build_coarse_col_basis_with_cover, build_coarse_row_basis, project_final};
use crate::error::{H2Error, Result};
use crate::h2::H2Matrix;
use crate::induced::{
    assemble_product_owned, col_inputs, compress_induced_col_basis, compress_induced_row_basis, row_inputs,
    CompressionOptions,
};
use crate::model::{KernelProblem, ModelSetup};
use crate::trees::BlockTree;

/// Any linear operator with products by itself and its transpose.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `y ← y + A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `y ← y + Aᵀ x`.
    fn apply_adjoint(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for H2Matrix {
    fn nrows(&self) -> usize {
        H2Matrix::nrows(self)
    }

    fn ncols(&self) -> usize {
        H2Matrix::ncols(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(1.0, x, y).expect("dimensions checked by caller");
    }

    fn apply_adjoint(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_adjoint(1.0, x, y).expect("dimensions checked by caller");
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spectral norm estimate of `apply` (with adjoint `apply_t`) from `steps`
/// power iterations on `AᵀA`, started at `x0`.
pub fn power_iteration(
    n: usize,
    steps: usize,
    x0: &[f64],
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    mut apply_t: impl FnMut(&[f64]) -> Vec<f64>,
) -> f64 {
    let mut x = x0.to_vec();
    let mut est = 0.0;
    for _ in 0..steps {
        let nx = norm2(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let y = apply(&x);
        est = norm2(&y);
        if est == 0.0 {
            return 0.0;
        }
        x = apply_t(&y);
    }
    debug_assert_eq!(x.len(), n);
    est
}

fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `‖XY − G‖₂ / ‖XY‖₂`, both norms estimated by `steps` power iterations.
pub fn estimate_relative_spectral_error(
    x: &dyn LinearOperator,
    y: &dyn LinearOperator,
    g: &dyn LinearOperator,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    if steps == 0 {
        return Err(H2Error::InvalidInput("at least one power iteration step is needed".into()));
    }
    if x.ncols() != y.nrows() || g.nrows() != x.nrows() || g.ncols() != y.ncols() {
        return Err(H2Error::DimensionMismatch { expected: x.nrows(), got: g.nrows() });
    }
    let (m, n, k) = (x.nrows(), y.ncols(), x.ncols());
    let prod = |v: &[f64]| {
        let mut t = vec![0.0; k];
        y.apply(v, &mut t);
        let mut out = vec![0.0; m];
        x.apply(&t, &mut out);
        out
    };
    let prod_t = |u: &[f64]| {
        let mut t = vec![0.0; k];
        x.apply_adjoint(u, &mut t);
        let mut out = vec![0.0; n];
        y.apply_adjoint(&t, &mut out);
        out
    };
    let x0 = start_vector(n, seed);
    let reference = power_iteration(n, steps, &x0, prod, prod_t);
    let err = power_iteration(
        n,
        steps,
        &x0,
        |v| {
            let mut out = prod(v);
            out.iter_mut().for_each(|e| *e = -*e);
            g.apply(v, &mut out);
            out
        },
        |u| {
            let mut out = prod_t(u);
            out.iter_mut().for_each(|e| *e = -*e);
            g.apply_adjoint(u, &mut out);
            out
        },
    );
    if reference == 0.0 {
        return if err == 0.0 { Ok(0.0) } else { Err(H2Error::ZeroReference(err)) };
    }
    Ok(err / reference)
}

/// Dense matrix as a [`LinearOperator`].
pub struct DenseOperator<'a>(pub &'a crate::dense::Matrix);

impl LinearOperator for DenseOperator<'_> {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }

    fn ncols(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let r = self.0 * nalgebra::DVector::from_column_slice(x);
        y.iter_mut().zip(r.iter()).for_each(|(a, b)| *a += b);
    }

    fn apply_adjoint(&self, x: &[f64], y: &mut [f64]) {
        let r = self.0.tr_mul(&nalgebra::DVector::from_column_slice(x));
        y.iter_mut().zip(r.iter()).for_each(|(a, b)| *a += b);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoarsenTarget {
    /// The block tree of the input matrices.
    InputTree,
    /// The product block tree itself (re-compression only).
    ProductTree,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub problem: KernelProblem,
    pub eta: f64,
    pub leaf_size: Option<usize>,
    pub eps: f64,
    pub steps: usize,
    pub coarsen: CoarsenTarget,
    pub seed: u64,
    pub max_rank: Option<usize>,
    /// Recompress the interpolated input to this block-relative accuracy
    /// before multiplying.
    pub input_tol: Option<f64>,
    /// Also compare with the dense product (small `n` only).
    pub dense_check: bool,
}

impl ExperimentConfig {
    pub fn new(problem: KernelProblem, eps: f64) -> Self {
        Self {
            problem,
            eta: 2.0,
            leaf_size: None,
            eps,
            steps: 20,
            coarsen: CoarsenTarget::InputTree,
            seed: 1,
            max_rank: None,
            input_tol: None,
            dense_check: false,
        }
    }

    pub fn options(&self) -> CompressionOptions {
        CompressionOptions { max_rank: self.max_rank, ..CompressionOptions::new(self.eps) }
    }
}

/// Timings in seconds and error estimates of one phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseReport {
    pub t_row: f64,
    pub t_col: f64,
    pub t_mat: f64,
    pub eps2: f64,
    pub max_rank: usize,
    pub avg_rank: f64,
    pub memory_bytes: usize,
}

impl PhaseReport {
    pub fn total(&self) -> f64 {
        self.t_row + self.t_col + self.t_mat
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub problem: String,
    pub n: usize,
    pub eps: f64,
    pub eta: f64,
    pub order: usize,
    pub leaf_size: usize,
    pub input_max_rank: usize,
    pub t_setup: f64,
    pub induced: PhaseReport,
    pub fin: PhaseReport,
    /// `‖XY − G_final‖₂ / ‖XY‖₂` against the dense product, if requested.
    pub dense_eps2: Option<f64>,
}

impl RunReport {
    pub const CSV_HEADER: &'static str = "problem,n,eps,eta,order,leaf_size,input_max_rank,t_setup,\
ind_t_row,ind_t_col,ind_t_mat,ind_eps2,ind_max_rank,ind_avg_rank,ind_mem,\
fin_t_row,fin_t_col,fin_t_mat,fin_eps2,fin_max_rank,fin_avg_rank,fin_mem,\
t_total,t_per_dof,dense_eps2";

    /// Multiplication time of both phases.
    pub fn t_total(&self) -> f64 {
        self.induced.total() + self.fin.total()
    }

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{:e},{:e},{},{},{},{:e}",
            self.problem, self.n, self.eps, self.eta, self.order, self.leaf_size, self.input_max_rank, self.t_setup
        );
        for p in [&self.induced, &self.fin] {
            let _ = write!(
                s,
                ",{:e},{:e},{:e},{:e},{},{:e},{}",
                p.t_row, p.t_col, p.t_mat, p.eps2, p.max_rank, p.avg_rank, p.memory_bytes
            );
        }
        let _ = write!(s, ",{:e},{:e}", self.t_total(), self.t_total() / self.n as f64);
        match self.dense_eps2 {
            Some(e) => {
                let _ = write!(s, ",{e:e}");
            }
            None => s.push(','),
        }
        s
    }
}

pub fn problem_name(p: &KernelProblem) -> &'static str {
    use crate::model::{Geometry, Kernel};
    match (p.geometry, p.kernel) {
        (Geometry::Sphere, Kernel::SingleLayer) => "slp-sphere",
        (Geometry::CubeSurface, Kernel::DoubleLayer) => "dlp-cube",
        (Geometry::Interval, Kernel::Log1d) => "log-1d",
        _ => "custom",
    }
}

/// Both phases of `X·X` with timings; returns the report and the two
/// products.
pub fn run_experiment_with(setup: &ModelSetup, cfg: &ExperimentConfig) -> Result<(RunReport, H2Matrix, H2Matrix)> {
    let x = &setup.matrix;
    let opts = cfg.options();

    let clock = Instant::now();
    let (zy, pxy) = row_inputs(x, x, opts.scaling)?;
    let row = compress_induced_row_basis(x, x, &zy, &pxy, &opts)?;
    let t_row = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let (zxt, pyx) = col_inputs(x, x, opts.scaling)?;
    let col = compress_induced_col_basis(x, x, &zxt, &pyx, &opts)?;
    let t_col = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    drop((zy, zxt, pyx));
    let g1 = assemble_product_owned(x, x, row, col, &pxy)?;
    let t_mat = clock.elapsed().as_secs_f64();
    drop(pxy);

    let coarse: Arc<BlockTree> = match cfg.coarsen {
        CoarsenTarget::InputTree => setup.blocks.clone(),
        CoarsenTarget::ProductTree => g1.blocks.clone(),
    };
    let clock = Instant::now();
    let crow = build_coarse_row_basis(&g1, &coarse, &opts)?;
    let f_row = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let ccol = build_coarse_col_basis_with_cover(&g1, &crow.cover, &opts)?;
    let f_col = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let g2 = project_final(&g1, &crow, &ccol, coarse)?;
    let f_mat = clock.elapsed().as_secs_f64();
    drop((crow, ccol));

    let eps_ind = estimate_relative_spectral_error(x, x, &g1, cfg.steps, cfg.seed)?;
    let eps_fin = estimate_relative_spectral_error(x, x, &g2, cfg.steps, cfg.seed)?;
    let dense_eps2 = if cfg.dense_check {
        let d = x.to_dense()?;
        let prod = &d * &d;
        let diff = &prod - g2.to_dense()?;
        Some(crate::dense::spectral_norm(&diff) / crate::dense::spectral_norm(&prod))
    } else {
        None
    };

    let phase = |t_row, t_col, t_mat, eps2, g: &H2Matrix| PhaseReport {
        t_row,
        t_col,
        t_mat,
        eps2,
        max_rank: g.row_basis.max_rank().max(g.col_basis.max_rank()),
        avg_rank: 0.5 * (g.row_basis.avg_rank() + g.col_basis.avg_rank()),
        memory_bytes: g.memory_bytes(),
    };
    let leaf_size = setup.tree.leaves().map(|t| setup.tree.node(t).size()).max().unwrap_or(0);
    let report = RunReport {
        problem: problem_name(&cfg.problem).to_string(),
        n: cfg.problem.n,
        eps: cfg.eps,
        eta: cfg.eta,
        order: cfg.problem.order,
        leaf_size,
        input_max_rank: x.row_basis.max_rank().max(x.col_basis.max_rank()),
        t_setup: 0.0,
        induced: phase(t_row, t_col, t_mat, eps_ind, &g1),
        fin: phase(f_row, f_col, f_mat, eps_fin, &g2),
        dense_eps2,
    };
    Ok((report, g1, g2))
}

/// Builds the model problem and runs both phases.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let clock = Instant::now();
    let mut setup = ModelSetup::new(cfg.problem, cfg.eta, cfg.leaf_size)?;
    if let Some(tol) = cfg.input_tol {
        setup.recompress(tol)?;
    }
    let t_setup = clock.elapsed().as_secs_f64();
    let (mut report, _, _) = run_experiment_with(&setup, cfg)?;
    report.t_setup = t_setup;
    Ok(report)
}

/// One experiment per problem size; returns the reports and the CSV text.
pub fn run_scaling_sweep(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<(Vec<RunReport>, String)> {
    let mut csv = String::from(RunReport::CSV_HEADER);
    csv.push('\n');
    let mut reports = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut c = cfg.clone();
        c.problem.n = n;
        let report = run_experiment(&c)?;
        csv.push_str(&report.csv_row());
        csv.push('\n');
        reports.push(report);
    }
    Ok((reports, csv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::Matrix;

    #[test]
    fn zero_error_for_exact_product() {
        let a = Matrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let prod = &a * &a;
        let e = estimate_relative_spectral_error(&DenseOperator(&a), &DenseOperator(&a), &DenseOperator(&prod), 20, 1)
            .unwrap();
        assert!(e <= 1e-12);
        let zero = Matrix::zeros(6, 6);
        let e = estimate_relative_spectral_error(&DenseOperator(&a), &DenseOperator(&a), &DenseOperator(&zero), 20, 1)
            .unwrap();
        assert!((e - 1.0).abs() < 1e-3);
        let e = estimate_relative_spectral_error(&DenseOperator(&zero), &DenseOperator(&a), &DenseOperator(&zero), 5, 1)
            .unwrap();
        assert_eq!(e, 0.0);
        assert!(estimate_relative_spectral_error(&DenseOperator(&zero), &DenseOperator(&a), &DenseOperator(&a), 5, 1)
            .is_err());
    }

    #[test]
    fn csv_row_matches_header() {
        let cfg = ExperimentConfig::new(KernelProblem::log_1d(256, 3), 1e-4);
        let r = run_experiment(&cfg).unwrap();
        let cols = RunReport::CSV_HEADER.split(',').count();
        assert_eq!(r.csv_row().split(',').count(), cols);
        assert!(r.fin.eps2 <= 1e-4);
        assert!(r.induced.total() >= 0.0);
    }
}
