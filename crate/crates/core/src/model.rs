//! Model problems: kernel matrices on an interval, the unit sphere and the
//! surface of the cube `[-1, 1]³`, approximated by tensor Chebyshev
//! interpolation.
//!
//! Entries are `g(x_i, x_j) w_i w_j` with panel midpoints `x_i` and panel
//! sizes `w_i`; the singular diagonal is set to zero.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::dense::Matrix;
use crate::error::{H2Error, Result};
use crate::h2::{ClusterBasis, H2Matrix, DENSE_LIMIT};
use crate::induced::CompressionOptions;
use crate::trees::{BBox, BlockKind, BlockTree, ClusterTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    /// `[0, 1]` split into `n` intervals.
    Interval,
    /// Octahedron with faces split into `p²` triangles, projected to the
    /// unit sphere; `n = 8p²`.
    Sphere,
    /// Cube `[-1, 1]³`, each face split into `p²` squares of two
    /// triangles; `n = 12p²`.
    CubeSurface,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// `-ln|x - y|`.
    Log1d,
    /// `1 / (4π|x - y|)`.
    SingleLayer,
    /// `⟨n_y, x - y⟩ / (4π|x - y|³)`, the normal derivative of the
    /// single-layer kernel in `y`.
    DoubleLayer,
    /// `1`, for tests.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelProblem {
    pub geometry: Geometry,
    pub kernel: Kernel,
    pub n: usize,
    /// Interpolation points per axis.
    pub order: usize,
}

impl KernelProblem {
    pub fn log_1d(n: usize, order: usize) -> Self {
        Self { geometry: Geometry::Interval, kernel: Kernel::Log1d, n, order }
    }

    pub fn slp_sphere(n: usize, order: usize) -> Self {
        Self { geometry: Geometry::Sphere, kernel: Kernel::SingleLayer, n, order }
    }

    pub fn dlp_cube(n: usize, order: usize) -> Self {
        Self { geometry: Geometry::CubeSurface, kernel: Kernel::DoubleLayer, n, order }
    }

    pub fn dim(&self) -> usize {
        match self.geometry {
            Geometry::Interval => 1,
            _ => 3,
        }
    }

    /// Nominal rank `order^dim`.
    pub fn rank(&self) -> usize {
        self.order.pow(self.dim() as u32)
    }

    /// Dimension of the interval or surface.
    pub fn manifold_dim(&self) -> usize {
        match self.geometry {
            Geometry::Interval => 1,
            _ => 2,
        }
    }

    /// `2 · order^manifold_dim`.
    pub fn default_leaf_size(&self) -> usize {
        2 * self.order.pow(self.manifold_dim() as u32)
    }
}

/// Panels of a discretized geometry.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub dim: usize,
    /// Midpoints, `dim` coordinates each.
    pub points: Vec<f64>,
    /// Panel lengths or areas.
    pub weights: Vec<f64>,
    /// Unit normals (surfaces only).
    pub normals: Option<Vec<f64>>,
    /// Bounding box of every panel.
    pub supports: Vec<BBox>,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl Discretization {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn normal(&self, i: usize) -> Option<&[f64]> {
        self.normals.as_ref().map(|n| &n[i * 3..i * 3 + 3])
    }

    /// Plain-text mesh: `v x y z` lines followed by `f a b c` lines
    /// (1-based vertex indices).
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }
}

fn refinement(n: usize, faces: usize) -> Option<usize> {
    if n == 0 || !n.is_multiple_of(faces) {
        return None;
    }
    let p = ((n / faces) as f64).sqrt().round() as usize;
    (p * p * faces == n).then_some(p)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

impl MeshBuilder {
    fn vertex(&mut self, v: [f64; 3]) -> usize {
        self.vertices.push(v);
        self.vertices.len() - 1
    }

    fn finish(self) -> Discretization {
        let n = self.triangles.len();
        let mut points = Vec::with_capacity(3 * n);
        let mut normals = Vec::with_capacity(3 * n);
        let mut weights = Vec::with_capacity(n);
        let mut supports = Vec::with_capacity(n);
        for tri in &self.triangles {
            let [a, b, c] = tri.map(|i| self.vertices[i]);
            let cr = cross(sub(b, a), sub(c, a));
            let len = norm(&cr);
            weights.push(0.5 * len);
            normals.extend(cr.iter().map(|x| x / len));
            points.extend((0..3).map(|d| (a[d] + b[d] + c[d]) / 3.0));
            let mut bb = BBox::empty(3);
            for v in [a, b, c] {
                bb.include_point(&v);
            }
            supports.push(bb);
        }
        Discretization {
            dim: 3,
            points,
            weights,
            normals: Some(normals),
            supports,
            vertices: self.vertices,
            triangles: self.triangles,
        }
    }
}

fn sphere(p: usize) -> Discretization {
    let mut mesh = MeshBuilder::default();
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for sz in [1.0, -1.0] {
                let (a, mut b, mut c) = ([sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, sz]);
                if dot(&cross(sub(b, a), sub(c, a)), &[sx, sy, sz]) < 0.0 {
                    std::mem::swap(&mut b, &mut c);
                }
                let mut grid = vec![vec![0usize; p + 1]; p + 1];
                for i in 0..=p {
                    for j in 0..=p - i {
                        let (u, v) = (i as f64 / p as f64, j as f64 / p as f64);
                        let q: [f64; 3] = std::array::from_fn(|d| a[d] + u * (b[d] - a[d]) + v * (c[d] - a[d]));
                        let len = norm(&q);
                        grid[i][j] = mesh.vertex(q.map(|x| x / len));
                    }
                }
                for i in 0..p {
                    for j in 0..p - i {
                        mesh.triangles.push([grid[i][j], grid[i + 1][j], grid[i][j + 1]]);
                        if i + j + 1 < p {
                            mesh.triangles.push([grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]]);
                        }
                    }
                }
            }
        }
    }
    mesh.finish()
}

fn cube(p: usize) -> Discretization {
    let mut mesh = MeshBuilder::default();
    for axis in 0..3 {
        for side in [1.0, -1.0] {
            let (u_ax, v_ax) = ((axis + 1) % 3, (axis + 2) % 3);
            let mut grid = vec![vec![0usize; p + 1]; p + 1];
            for (i, row) in grid.iter_mut().enumerate() {
                for (j, slot) in row.iter_mut().enumerate() {
                    let mut q = [0.0; 3];
                    q[axis] = side;
                    q[u_ax] = -1.0 + 2.0 * i as f64 / p as f64;
                    q[v_ax] = -1.0 + 2.0 * j as f64 / p as f64;
                    *slot = mesh.vertex(q);
                }
            }
            let mut normal = [0.0; 3];
            normal[axis] = side;
            for i in 0..p {
                for j in 0..p {
                    let (a, b, c, d) = (grid[i][j], grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]);
                    for mut tri in [[a, b, c], [a, c, d]] {
                        let [x, y, z] = tri.map(|k| mesh.vertices[k]);
                        if dot(&cross(sub(y, x), sub(z, x)), &normal) < 0.0 {
                            tri.swap(1, 2);
                        }
                        mesh.triangles.push(tri);
                    }
                }
            }
        }
    }
    mesh.finish()
}

fn interval(n: usize) -> Discretization {
    let h = 1.0 / n as f64;
    Discretization {
        dim: 1,
        points: (0..n).map(|i| (i as f64 + 0.5) * h).collect(),
        weights: vec![h; n],
        normals: None,
        supports: (0..n).map(|i| BBox { min: vec![i as f64 * h], max: vec![(i + 1) as f64 * h] }).collect(),
        vertices: (0..=n).map(|i| [i as f64 * h, 0.0, 0.0]).collect(),
        triangles: Vec::new(),
    }
}

/// Panels of the problem's geometry.
pub fn build_geometry(p: &KernelProblem) -> Result<Discretization> {
    let bad = || H2Error::InvalidInput(format!("n = {} is not realizable for {:?}", p.n, p.geometry));
    match p.geometry {
        Geometry::Interval if p.n >= 2 => Ok(interval(p.n)),
        Geometry::Interval => Err(bad()),
        Geometry::Sphere => refinement(p.n, 8).map(sphere).ok_or_else(bad),
        Geometry::CubeSurface => refinement(p.n, 12).map(cube).ok_or_else(bad),
    }
}

/// Kernel `g(x, y)`; `ny` is the normal at `y` (double layer only).
pub fn kernel_value(kernel: Kernel, x: &[f64], y: &[f64], ny: Option<&[f64]>) -> f64 {
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let r = norm(&diff);
    match kernel {
        Kernel::Log1d => -r.ln(),
        Kernel::SingleLayer => 1.0 / (4.0 * PI * r),
        Kernel::DoubleLayer => {
            let ny = ny.expect("double-layer kernel needs normals");
            dot(ny, &diff) / (4.0 * PI * r * r * r)
        }
        Kernel::Constant => 1.0,
    }
}

/// Smooth kernel that is interpolated in both variables.
fn generating_kernel(kernel: Kernel, x: &[f64], y: &[f64]) -> f64 {
    match kernel {
        Kernel::DoubleLayer => kernel_value(Kernel::SingleLayer, x, y, None),
        k => kernel_value(k, x, y, None),
    }
}

/// Entry `g(x_i, x_j) w_i w_j` in original numbering; zero on the diagonal.
pub fn matrix_entry(kernel: Kernel, disc: &Discretization, i: usize, j: usize) -> f64 {
    if i == j {
        return 0.0;
    }
    kernel_value(kernel, disc.point(i), disc.point(j), disc.normal(j)) * (disc.weights[i] * disc.weights[j])
}

/// Dense kernel matrix in original numbering.
pub fn dense_kernel_matrix(p: &KernelProblem, disc: &Discretization) -> Result<Matrix> {
    let n = disc.len();
    if n > DENSE_LIMIT {
        return Err(H2Error::TooLarge { n, limit: DENSE_LIMIT });
    }
    Ok(Matrix::from_fn(n, n, |i, j| matrix_entry(p.kernel, disc, i, j)))
}

/// Tensor Chebyshev–Lobatto grid on a box.
#[derive(Clone, Debug)]
pub struct Grid {
    pub axes: Vec<Vec<f64>>,
}

impl Grid {
    /// Grid with `order` points per axis; flat axes get a single point
    /// unless `pad` is set, in which case they are widened to
    /// `0.1 · (largest extent)`.
    pub fn new(bbox: &BBox, order: usize, pad: bool) -> Self {
        let dim = bbox.dim();
        let max_ext = (0..dim).map(|d| bbox.extent(d)).fold(0.0, f64::max);
        let axes = (0..dim)
            .map(|d| {
                let mid = 0.5 * (bbox.min[d] + bbox.max[d]);
                let mut half = 0.5 * bbox.extent(d);
                let flat = half <= 1e-12 * max_ext.max(f64::MIN_POSITIVE);
                if flat && pad {
                    half = 0.05 * max_ext.max(1e-3);
                }
                if order <= 1 || (flat && !pad) {
                    vec![mid]
                } else {
                    (0..order).map(|i| mid + half * (PI * i as f64 / (order - 1) as f64).cos()).collect()
                }
            })
            .collect();
        Self { axes }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of node `idx` (first axis fastest).
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        self.axes
            .iter()
            .map(|ax| {
                let i = idx % ax.len();
                idx /= ax.len();
                ax[i]
            })
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    fn tensor(&self, factors: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![1.0];
        for f in factors {
            let mut next = Vec::with_capacity(out.len() * f.len());
            for &b in f {
                for &a in &out {
                    next.push(a * b);
                }
            }
            out = next;
        }
        out
    }

    /// All Lagrange polynomials at `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let factors: Vec<Vec<f64>> = self.axes.iter().zip(x).map(|(ax, &xi)| lagrange(ax, xi)).collect();
        self.tensor(&factors)
    }

    /// Directional derivative `⟨n, ∇ℓ_ν(x)⟩` of all Lagrange polynomials.
    pub fn eval_normal_derivative(&self, x: &[f64], n: &[f64]) -> Vec<f64> {
        let vals: Vec<Vec<f64>> = self.axes.iter().zip(x).map(|(ax, &xi)| lagrange(ax, xi)).collect();
        let ders: Vec<Vec<f64>> = self.axes.iter().zip(x).map(|(ax, &xi)| lagrange_derivative(ax, xi)).collect();
        let mut out = vec![0.0; self.len()];
        for d in 0..self.axes.len() {
            if n[d] == 0.0 {
                continue;
            }
            let mut factors = vals.clone();
            factors[d] = ders[d].clone();
            for (o, v) in out.iter_mut().zip(self.tensor(&factors)) {
                *o += n[d] * v;
            }
        }
        out
    }
}

/// Values of the Lagrange polynomials for `nodes` at `x`.
pub fn lagrange(nodes: &[f64], x: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|i| {
            let mut v = 1.0;
            for (j, &xj) in nodes.iter().enumerate() {
                if j != i {
                    v *= (x - xj) / (nodes[i] - xj);
                }
            }
            v
        })
        .collect()
}

/// Derivatives of the Lagrange polynomials for `nodes` at `x`.
pub fn lagrange_derivative(nodes: &[f64], x: f64) -> Vec<f64> {
    let m = nodes.len();
    (0..m)
        .map(|i| {
            let mut sum = 0.0;
            for j in 0..m {
                if j == i {
                    continue;
                }
                let mut term = 1.0 / (nodes[i] - nodes[j]);
                for l in 0..m {
                    if l != i && l != j {
                        term *= (x - nodes[l]) / (nodes[i] - nodes[l]);
                    }
                }
                sum += term;
            }
            sum
        })
        .collect()
}

/// Side of the matrix a basis belongs to.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Row,
    Col,
}

fn interpolation_basis(
    p: &KernelProblem,
    disc: &Discretization,
    tree: &Arc<ClusterTree>,
    side: Side,
) -> (ClusterBasis, Vec<Grid>) {
    let pad = p.kernel == Kernel::DoubleLayer;
    let grids: Vec<Grid> = tree.nodes.iter().map(|c| Grid::new(&c.point_box, p.order, pad)).collect();
    let mut basis = ClusterBasis::empty(tree.clone());
    for t in 0..tree.len() {
        let k = grids[t].len();
        basis.ranks[t] = k;
        if let Some(parent) = tree.node(t).parent {
            let gp = &grids[parent];
            let rows: Vec<Vec<f64>> = grids[t].points().iter().map(|xi| gp.eval(xi)).collect();
            basis.transfer[t] = Some(Matrix::from_fn(k, gp.len(), |i, j| rows[i][j]));
        }
        if tree.is_leaf(t) {
            let range = tree.range(t);
            let mut v = Matrix::zeros(range.len(), k);
            for (row, pos) in range.enumerate() {
                let i = tree.perm[pos];
                let x = disc.point(i);
                let vals = if side == Side::Col && p.kernel == Kernel::DoubleLayer {
                    grids[t].eval_normal_derivative(x, disc.normal(i).expect("normals"))
                } else {
                    grids[t].eval(x)
                };
                for (j, val) in vals.into_iter().enumerate() {
                    v[(row, j)] = val * disc.weights[i];
                }
            }
            basis.leaf[t] = Some(v);
        }
    }
    (basis, grids)
}

/// H²-matrix approximation of the kernel matrix on `blocks` (tree order).
pub fn build_h2_by_interpolation(
    p: &KernelProblem,
    disc: &Discretization,
    blocks: Arc<BlockTree>,
) -> Result<H2Matrix> {
    if blocks.rows.size() != disc.len() || blocks.cols.size() != disc.len() {
        return Err(H2Error::DimensionMismatch { expected: disc.len(), got: blocks.rows.size() });
    }
    if p.order == 0 {
        return Err(H2Error::InvalidInput("interpolation order must be positive".into()));
    }
    let (row_basis, row_grids) = interpolation_basis(p, disc, &blocks.rows, Side::Row);
    let (col_basis, col_grids) = if Arc::ptr_eq(&blocks.rows, &blocks.cols) && p.kernel != Kernel::DoubleLayer {
        (row_basis.clone(), row_grids.clone())
    } else {
        interpolation_basis(p, disc, &blocks.cols, Side::Col)
    };
    let mut g = H2Matrix::zero(blocks.clone(), row_basis, col_basis);
    for b in 0..blocks.len() {
        let node = blocks.node(b);
        match node.kind {
            BlockKind::Admissible => {
                let xs = row_grids[node.row].points();
                let ys = col_grids[node.col].points();
                g.coupling[b] = Some(Matrix::from_fn(xs.len(), ys.len(), |i, j| {
                    generating_kernel(p.kernel, &xs[i], &ys[j])
                }));
            }
            BlockKind::Inadmissible => {
                let (rt, rs) = (blocks.rows.range(node.row), blocks.cols.range(node.col));
                let (pr, pc) = (&blocks.rows.perm, &blocks.cols.perm);
                g.nearfield[b] = Some(Matrix::from_fn(rt.len(), rs.len(), |i, j| {
                    matrix_entry(p.kernel, disc, pr[rt.start + i], pc[rs.start + j])
                }));
            }
            BlockKind::Internal => {}
        }
    }
    Ok(g)
}

/// Geometry, trees and H²-matrix of a model problem; the interpolation bases
/// are converted to isometric ones.
#[derive(Clone, Debug)]
pub struct ModelSetup {
    pub problem: KernelProblem,
    pub disc: Discretization,
    pub tree: Arc<ClusterTree>,
    pub blocks: Arc<BlockTree>,
    pub matrix: H2Matrix,
}

impl ModelSetup {
    /// Builds everything; see [`KernelProblem::default_leaf_size`].
    pub fn new(problem: KernelProblem, eta: f64, leaf_size: Option<usize>) -> Result<Self> {
        let disc = build_geometry(&problem)?;
        let leaf = leaf_size.unwrap_or(problem.default_leaf_size()).max(1);
        let tree = Arc::new(ClusterTree::build_with_supports(&disc.points, disc.dim, Some(&disc.supports), leaf)?);
        let blocks = Arc::new(BlockTree::build(tree.clone(), tree.clone(), eta)?);
        let matrix = build_h2_by_interpolation(&problem, &disc, blocks.clone())?.into_orthogonal();
        Ok(Self { problem, disc, tree, blocks, matrix })
    }

    /// Replaces the matrix by an adaptive approximation on the same block
    /// tree with block-relative accuracy `tol`.
    pub fn recompress(&mut self, tol: f64) -> Result<()> {
        self.matrix = crate::coarsen::coarsen(&self.matrix, self.blocks.clone(), &CompressionOptions::new(tol))?;
        Ok(())
    }

    /// Dense kernel matrix in tree order.
    pub fn dense(&self) -> Result<Matrix> {
        let d = dense_kernel_matrix(&self.problem, &self.disc)?;
        Ok(crate::h2::permute_dense(&d, &self.tree.perm, &self.tree.perm))
    }
}
