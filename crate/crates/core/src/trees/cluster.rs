use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{H2Error, Result};

/// Axis-aligned bounding box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BBox {
    pub fn empty(dim: usize) -> Self {
        Self { min: vec![f64::INFINITY; dim], max: vec![f64::NEG_INFINITY; dim] }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn include_point(&mut self, p: &[f64]) {
        for (d, &x) in p.iter().enumerate() {
            self.min[d] = self.min[d].min(x);
            self.max[d] = self.max[d].max(x);
        }
    }

    pub fn include_box(&mut self, other: &BBox) {
        for d in 0..self.dim() {
            self.min[d] = self.min[d].min(other.min[d]);
            self.max[d] = self.max[d].max(other.max[d]);
        }
    }

    pub fn extent(&self, d: usize) -> f64 {
        (self.max[d] - self.min[d]).max(0.0)
    }

    /// Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|d| self.extent(d).powi(2)).sum::<f64>().sqrt()
    }

    /// Euclidean distance between two boxes (zero if they touch or overlap).
    pub fn distance(&self, other: &BBox) -> f64 {
        (0..self.dim())
            .map(|d| {
                let gap = (other.min[d] - self.max[d]).max(self.min[d] - other.max[d]).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, p: &[f64], slack: f64) -> bool {
        p.iter()
            .enumerate()
            .all(|(d, &x)| x >= self.min[d] - slack && x <= self.max[d] + slack)
    }

    /// Axis of largest extent (first one on ties).
    pub fn longest_axis(&self) -> usize {
        let mut best = 0;
        for d in 1..self.dim() {
            if self.extent(d) > self.extent(best) {
                best = d;
            }
        }
        best
    }
}

/// Node of a [`ClusterTree`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cluster {
    /// Positions in the permuted index order.
    pub range: Range<usize>,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    pub level: usize,
    /// Box used for admissibility (covers supports when given).
    pub bbox: BBox,
    /// Box of the points themselves, used for interpolation.
    pub point_box: BBox,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.range.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Binary cluster tree built by median bisection.
///
/// Node ids are assigned in preorder, so every parent id is smaller than its
/// children's ids; iterating ids in reverse visits children before parents.
/// Cluster `t` owns the contiguous positions `range` of the permuted order;
/// `perm[pos]` is the original index stored at position `pos`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterTree {
    pub nodes: Vec<Cluster>,
    pub perm: Vec<usize>,
    pub dim: usize,
    /// Points in permuted order, `dim` coordinates each.
    pub points: Vec<f64>,
}

impl ClusterTree {
    /// Builds a cluster tree over `points` (flat, `dim` coordinates each).
    pub fn build(points: &[f64], dim: usize, leaf_size: usize) -> Result<Self> {
        Self::build_with_supports(points, dim, None, leaf_size)
    }

    /// Like [`ClusterTree::build`], with optional per-index support boxes
    /// that are folded into the admissibility boxes.
    ///
    /// All clusters are bisected down to a common depth `L`, the smallest
    /// with `ceil(n / 2^L) <= leaf_size`, so leaves hold at most `leaf_size`
    /// and more than `leaf_size / 2` indices. Single-index clusters stop
    /// early.
    pub fn build_with_supports(
        points: &[f64],
        dim: usize,
        supports: Option<&[BBox]>,
        leaf_size: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(H2Error::InvalidInput("spatial dimension must be positive".into()));
        }
        if leaf_size == 0 {
            return Err(H2Error::InvalidInput("leaf size must be at least 1".into()));
        }
        if points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(H2Error::InvalidInput(format!(
                "expected a non-empty point array with a multiple of {dim} coordinates"
            )));
        }
        let n = points.len() / dim;
        if let Some(s) = supports {
            if s.len() != n {
                return Err(H2Error::DimensionMismatch { expected: n, got: s.len() });
            }
        }
        let mut depth = 0;
        while n.div_ceil(1 << depth) > leaf_size {
            depth += 1;
        }
        let mut builder = Builder {
            points,
            dim,
            supports,
            perm: (0..n).collect(),
            nodes: Vec::new(),
            depth,
        };
        builder.split(0..n, None, 0);
        let Builder { perm, nodes, .. } = builder;
        let mut permuted = Vec::with_capacity(points.len());
        for &i in &perm {
            permuted.extend_from_slice(&points[i * dim..(i + 1) * dim]);
        }
        Ok(Self { nodes, perm, dim, points: permuted })
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn size(&self) -> usize {
        self.perm.len()
    }

    pub fn node(&self, t: usize) -> &Cluster {
        &self.nodes[t]
    }

    pub fn children(&self, t: usize) -> &[usize] {
        &self.nodes[t].children
    }

    pub fn is_leaf(&self, t: usize) -> bool {
        self.nodes[t].children.is_empty()
    }

    pub fn range(&self, t: usize) -> Range<usize> {
        self.nodes[t].range.clone()
    }

    pub fn point(&self, pos: usize) -> &[f64] {
        &self.points[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&t| self.is_leaf(t))
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|c| c.level).max().unwrap_or(0)
    }

    /// True when every leaf sits on the same level.
    pub fn is_level_uniform(&self) -> bool {
        let d = self.depth();
        self.leaves().all(|t| self.nodes[t].level == d)
    }

    /// Structural identity: same node ranges and children.
    pub fn same_structure(&self, other: &ClusterTree) -> bool {
        std::ptr::eq(self, other)
            || (self.len() == other.len()
                && self.perm == other.perm
                && self
                    .nodes
                    .iter()
                    .zip(&other.nodes)
                    .all(|(a, b)| a.range == b.range && a.children == b.children))
    }

    /// Position of the child `c` inside the parent's range.
    pub fn offset_in_parent(&self, c: usize) -> usize {
        let p = self.nodes[c].parent.expect("root has no parent");
        self.nodes[c].range.start - self.nodes[p].range.start
    }

    /// Scatter a vector from original to permuted order.
    pub fn to_tree_order(&self, x: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&i| x[i]).collect()
    }

    /// Gather a vector from permuted back to original order.
    pub fn to_original_order(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (pos, &i) in self.perm.iter().enumerate() {
            out[i] = x[pos];
        }
        out
    }

    /// Indented text dump, one cluster per line:
    /// `<indent>#id level=<l> range=<a>..<b> size=<s>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![self.root()];
        while let Some(t) = stack.pop() {
            let c = &self.nodes[t];
            let _ = writeln!(
                out,
                "{}#{} level={} range={}..{} size={}",
                "  ".repeat(c.level),
                t,
                c.level,
                c.range.start,
                c.range.end,
                c.size()
            );
            stack.extend(c.children.iter().rev());
        }
        out
    }
}

struct Builder<'a> {
    points: &'a [f64],
    dim: usize,
    supports: Option<&'a [BBox]>,
    perm: Vec<usize>,
    nodes: Vec<Cluster>,
    depth: usize,
}

impl Builder<'_> {
    fn coord(&self, i: usize, d: usize) -> f64 {
        self.points[i * self.dim + d]
    }

    fn split(&mut self, range: Range<usize>, parent: Option<usize>, level: usize) -> usize {
        let mut point_box = BBox::empty(self.dim);
        for &i in &self.perm[range.clone()] {
            point_box.include_point(&self.points[i * self.dim..(i + 1) * self.dim]);
        }
        let mut bbox = point_box.clone();
        if let Some(s) = self.supports {
            for &i in &self.perm[range.clone()] {
                bbox.include_box(&s[i]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Cluster {
            range: range.clone(),
            children: Vec::new(),
            parent,
            level,
            bbox,
            point_box,
        });
        if level >= self.depth || range.len() <= 1 {
            return id;
        }
        let axis = self.nodes[id].point_box.longest_axis();
        let mut idx: Vec<usize> = self.perm[range.clone()].to_vec();
        idx.sort_by(|&a, &b| {
            self.coord(a, axis).total_cmp(&self.coord(b, axis)).then(a.cmp(&b))
        });
        self.perm[range.clone()].copy_from_slice(&idx);
        let mid = range.start + range.len() / 2;
        let left = self.split(range.start..mid, Some(id), level + 1);
        let right = self.split(mid..range.end, Some(id), level + 1);
        self.nodes[id].children = vec![left, right];
        id
    }
}

/// Standard η-admissibility: `max(diam t, diam s) <= η · dist(t, s)` with a
/// strictly positive distance.
pub fn admissible(t: &BBox, s: &BBox, eta: f64) -> bool {
    let dist = t.distance(s);
    dist > 0.0 && t.diameter().max(s.diameter()) <= eta * dist
}
