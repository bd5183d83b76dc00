use crate::error::{Error, Result};
use crate::numerics::{CVector, C64};

/// `[Re z; Im z]`: all real parts, then all imaginary parts.
pub fn pack_complex(z: &[C64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * z.len());
    out.extend(z.iter().map(|c| c.re));
    out.extend(z.iter().map(|c| c.im));
    out
}

pub fn unpack_complex(x: &[f64]) -> Result<CVector> {
    if x.len() % 2 != 0 {
        return Err(Error::dim(format!("cannot unpack odd length {}", x.len())));
    }
    let n = x.len() / 2;
    Ok((0..n).map(|i| C64::new(x[i], x[n + i])).collect())
}
