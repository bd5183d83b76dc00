use super::{CMatrix, CVector, ZERO};
use crate::error::{Error, Result};

/// The `n² × n` binary matrix `D` with `vec(diag(x)) = D x`.
///
/// Stored as its size only; all products are index mappings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SelectionMatrixD {
    n: usize,
}

impl SelectionMatrixD {
    pub fn new(n: usize) -> Self {
        SelectionMatrixD { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `D x`: places `x_i` at flat index `i·n + i` of an `n²` vector.
    pub fn apply(&self, x: &CVector) -> Result<CVector> {
        if x.len() != self.n {
            return Err(Error::dim(format!(
                "selection matrix of size {} applied to length-{} vector",
                self.n,
                x.len()
            )));
        }
        let mut out = CVector::zeros(self.n * self.n);
        for i in 0..self.n {
            out[i * self.n + i] = x[i];
        }
        Ok(out)
    }

    /// `Dᵀ v`: extracts the diagonal positions of an `n²` vector.
    pub fn apply_transpose(&self, v: &CVector) -> Result<CVector> {
        if v.len() != self.n * self.n {
            return Err(Error::dim(format!(
                "transpose of selection matrix of size {} applied to length-{} vector",
                self.n,
                v.len()
            )));
        }
        Ok((0..self.n).map(|i| v[i * self.n + i]).collect())
    }

    /// `M D` for `M` with `n²` columns: keeps column `i·n + i` as column `i`.
    pub fn right_multiply(&self, m: &CMatrix) -> Result<CMatrix> {
        if m.cols() != self.n * self.n {
            return Err(Error::dim(format!(
                "{}x{} matrix times {}x{} selection matrix",
                m.rows(),
                m.cols(),
                self.n * self.n,
                self.n
            )));
        }
        let n = self.n;
        Ok(CMatrix::from_fn(m.rows(), n, |r, i| m[(r, i * n + i)]))
    }

    /// Dense materialisation, for tests on small sizes only.
    pub fn to_dense(&self) -> CMatrix {
        let n = self.n;
        let mut d = CMatrix::zeros(n * n, n);
        for i in 0..n {
            d[(i * n + i, i)] = super::ONE;
        }
        debug_assert!(d.as_slice().iter().filter(|z| **z != ZERO).count() == n);
        d
    }
}

/// Same as [`SelectionMatrixD::apply`].
pub fn apply_selection(d: SelectionMatrixD, x: &CVector) -> Result<CVector> {
    d.apply(x)
}
