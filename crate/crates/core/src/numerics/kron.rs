use super::CMatrix;
use crate::error::{Error, Result};

/// Upper bound on the number of entries a Kronecker product may allocate.
pub const MAX_KRON_ELEMENTS: usize = 1 << 26;

/// Kronecker product `a ⊗ b`, of shape `(a.rows·b.rows) × (a.cols·b.cols)`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let rows = a.rows().checked_mul(b.rows());
    let cols = a.cols().checked_mul(b.cols());
    let total = rows.zip(cols).and_then(|(r, c)| r.checked_mul(c));
    let (rows, cols) = match (rows, cols, total) {
        (Some(r), Some(c), Some(t)) if t <= MAX_KRON_ELEMENTS => (r, c),
        _ => {
            return Err(Error::Capacity(format!(
                "kron of {:?} and {:?} exceeds {MAX_KRON_ELEMENTS} entries",
                a.shape(),
                b.shape()
            )))
        }
    };
    Ok(CMatrix::from_fn(rows, cols, |i, j| {
        let (ai, bi) = (i / b.rows(), i % b.rows());
        let (aj, bj) = (j / b.cols(), j % b.cols());
        a[(ai, aj)] * b[(bi, bj)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{CVector, SelectionMatrixD, C64};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_factor_gives_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = CMatrix::random(2, 3, &mut rng);
        let k = kron(&CMatrix::identity(2), &b).unwrap();
        assert_eq!(k.shape(), (4, 6));
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(k[(i, j)], b[(i, j)]);
                assert_eq!(k[(i + 2, j + 3)], b[(i, j)]);
                assert_eq!(k[(i, j + 3)], C64::new(0.0, 0.0));
                assert_eq!(k[(i + 2, j)], C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn scalar_factor_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = CMatrix::random(3, 2, &mut rng);
        let c = C64::new(0.5, -2.0);
        let k = kron(&CMatrix::from_diag(&[c]), &b).unwrap();
        assert!(k.max_abs_diff(&b.scale(c)) < 1e-15);
    }

    #[test]
    fn vec_identity_with_diagonal_middle_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = CMatrix::random(3, 3, &mut rng);
        let b = CMatrix::random(3, 3, &mut rng);
        let x = CVector::random(3, &mut rng);
        let lhs = a
            .matmul(&CMatrix::from_diag(x.as_slice()))
            .unwrap()
            .matmul(&b)
            .unwrap()
            .vec();
        let dx = SelectionMatrixD::new(3).apply(&x).unwrap();
        let rhs = kron(&b.transpose(), &a).unwrap().mul_vec(&dx).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn oversized_product_is_rejected() {
        let a = CMatrix::zeros(1 << 7, 1 << 7);
        assert!(matches!(kron(&a, &a), Err(Error::Capacity(_))));
    }
}
