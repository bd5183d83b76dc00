//! Thin SVD by one-sided (Hestenes) Jacobi rotations.

use super::{CMatrix, CVector, C64, ONE, ZERO};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `a = U diag(sigma) Vᴴ`.
///
/// For an `m × n` input with `k = min(m, n)`, `u` is `m × k`, `v` is `n × k`
/// and `sigma` holds `k` non-negative values in descending order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> CMatrix {
        let sigma: Vec<C64> = self.sigma.iter().map(|&s| C64::new(s, 0.0)).collect();
        self.u
            .scale_cols(&sigma)
            .matmul(&self.v.adjoint())
            .expect("svd factors are conformant")
    }
}

pub fn svd(a: &CMatrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Numerical("svd input has non-finite entries".into()));
    }
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.adjoint())?;
        Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

/// Column-major working copy; each column is contiguous.
fn columns_of(a: &CMatrix) -> Vec<Vec<C64>> {
    (0..a.cols()).map(|j| a.column(j).into_vec()).collect()
}

fn jacobi_tall(a: &CMatrix) -> Result<Svd> {
    let (m, n) = a.shape();
    let mut cols = columns_of(a);
    let mut v: Vec<Vec<C64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { ONE } else { ZERO }).collect())
        .collect();

    let total: f64 = cols
        .iter()
        .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum();
    let floor = f64::MIN_POSITIVE.max(total * 1e-300);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = cols[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma: C64 = cols[p]
                    .iter()
                    .zip(&cols[q])
                    .map(|(x, y)| x.conj() * y)
                    .sum();
                let g = gamma.norm();
                if g <= f64::EPSILON * (alpha * beta).sqrt() || g <= floor {
                    continue;
                }
                rotated = true;
                // Phase-align column q so that the pair's inner product is real,
                // then apply the real Jacobi rotation that zeroes it.
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let e = phase.conj();
                rotate(&mut cols, p, q, c, s, e);
                rotate(&mut v, p, q, c, s, e);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let sigma_max = order.first().map_or(0.0, |o| o.0);
    let tol = sigma_max * (m.max(n) as f64) * f64::EPSILON;
    let mut u = CMatrix::zeros(m, n);
    let mut vv = CMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (k, &(s, j)) in order.iter().enumerate() {
        sigma.push(s);
        for i in 0..n {
            vv[(i, k)] = v[j][i];
        }
        if s > tol && s > 0.0 {
            for i in 0..m {
                u[(i, k)] = cols[j][i] / s;
            }
        } else {
            deficient.push(k);
        }
    }
    complete_orthonormal(&mut u, &deficient);
    Ok(Svd { u, sigma, v: vv })
}

fn rotate(cols: &mut [Vec<C64>], p: usize, q: usize, c: f64, s: f64, e: C64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let yq = *y * e;
        let np = *x * c - yq * s;
        let nq = *x * s + yq * c;
        *x = np;
        *y = nq;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column (modified Gram-Schmidt over the standard basis).
fn complete_orthonormal(u: &mut CMatrix, targets: &[usize]) {
    if targets.is_empty() {
        return;
    }
    let m = u.rows();
    let mut filled: Vec<usize> = (0..u.cols()).filter(|k| !targets.contains(k)).collect();
    let mut basis = 0;
    for &k in targets {
        while basis < m {
            let mut cand = CVector::zeros(m);
            cand[basis] = ONE;
            basis += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let col = u.column(f);
                    let proj = col.dot_conj(&cand);
                    for i in 0..m {
                        cand[i] -= col[i] * proj;
                    }
                }
            }
            let nrm = cand.norm();
            if nrm > 1e-8 {
                u.set_column(k, &cand.scale(C64::new(1.0 / nrm, 0.0)));
                filled.push(k);
                break;
            }
        }
    }
}
