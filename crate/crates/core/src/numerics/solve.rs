use super::{CMatrix, ZERO};
use crate::error::{Error, Result};

/// Solves `a X = b` by LU factorisation with partial pivoting.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::dim(format!(
            "solve with {:?} system and {:?} right-hand side",
            a.shape(),
            b.shape()
        )));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max);
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, lu[(i, k)].norm()))
            .fold((k, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if pmax <= scale * 1e-15 || pmax == 0.0 {
            return Err(Error::Numerical("singular matrix in solve".into()));
        }
        if piv != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            for j in 0..x.cols() {
                let t = x[(k, j)];
                x[(k, j)] = x[(piv, j)];
                x[(piv, j)] = t;
            }
        }
        let d = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / d;
            if f == ZERO {
                continue;
            }
            lu[(i, k)] = f;
            for j in k + 1..n {
                let t = lu[(k, j)];
                lu[(i, j)] -= f * t;
            }
            for j in 0..x.cols() {
                let t = x[(k, j)];
                x[(i, j)] -= f * t;
            }
        }
    }
    for j in 0..x.cols() {
        for i in (0..n).rev() {
            let mut acc = x[(i, j)];
            for k in i + 1..n {
                acc -= lu[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = acc / lu[(i, i)];
        }
    }
    Ok(x)
}

pub fn inverse(a: &CMatrix) -> Result<CMatrix> {
    solve(a, &CMatrix::identity(a.rows()))
}
