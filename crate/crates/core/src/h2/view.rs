use std::borrow::Cow;

use super::{ClusterBasis, H2Matrix};
use crate::dense::Matrix;
use crate::trees::BlockTree;

/// `G` or `Gᵀ` without copying the stored matrices. Transposed views own a
/// mirrored block tree (block ids are preserved) and transpose couplings and
/// dense blocks on access.
pub struct MatrixView<'a> {
    pub g: &'a H2Matrix,
    pub blocks: Cow<'a, BlockTree>,
    pub transposed: bool,
}

impl<'a> MatrixView<'a> {
    pub fn new(g: &'a H2Matrix, transposed: bool) -> Self {
        let blocks = if transposed { Cow::Owned(g.blocks.transpose()) } else { Cow::Borrowed(&*g.blocks) };
        Self { g, blocks, transposed }
    }

    pub fn plain(g: &'a H2Matrix) -> Self {
        Self::new(g, false)
    }

    pub fn transpose_of(g: &'a H2Matrix) -> Self {
        Self::new(g, true)
    }

    pub fn row_basis(&self) -> &'a ClusterBasis {
        if self.transposed { &self.g.col_basis } else { &self.g.row_basis }
    }

    pub fn col_basis(&self) -> &'a ClusterBasis {
        if self.transposed { &self.g.row_basis } else { &self.g.col_basis }
    }

    pub fn coupling(&self, b: usize) -> Cow<'a, Matrix> {
        let m = self.g.coupling_matrix(b);
        if self.transposed { Cow::Owned(m.transpose()) } else { Cow::Borrowed(m) }
    }

    /// `Sᵀ` of the viewed matrix.
    pub fn coupling_t(&self, b: usize) -> Cow<'a, Matrix> {
        let m = self.g.coupling_matrix(b);
        if self.transposed { Cow::Borrowed(m) } else { Cow::Owned(m.transpose()) }
    }

    pub fn dense(&self, b: usize) -> Cow<'a, Matrix> {
        let m = self.g.dense_block(b);
        if self.transposed { Cow::Owned(m.transpose()) } else { Cow::Borrowed(m) }
    }
}
