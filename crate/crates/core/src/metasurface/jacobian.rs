//! Jacobians of the received signal and their vector products.
//!
//! Complex cotangents follow `c = ∂J/∂Re z + j·∂J/∂Im z` (twice the
//! conjugate Wirtinger derivative). For a holomorphic linear map `y = A s`
//! this gives `c_s = Aᴴ c_y`, and for a phase `φ = exp(-jω)` the real
//! gradient is `Re(conj(c_φ) · (-jφ))`.

use super::{effective_channel, DiffractionStack, MsState, Surface};
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::numerics::{kron, CMatrix, CVector, SelectionMatrixD, C64};

/// `∂y/∂s`, the effective channel matrix.
pub fn grad_y_wrt_s(h: &ChannelRealization, omega: &CMatrix) -> Result<CMatrix> {
    effective_channel(h, omega)
}

/// `∂y/∂φ` for an RIS: column `n` is `H_2[:, n] · (H_1ᴴ s)_n`.
pub fn grad_y_wrt_ris_response(h: &ChannelRealization, s: &CVector) -> Result<CMatrix> {
    h.validate()?;
    let r = h.h_1.adjoint_mul_vec(s)?;
    Ok(h.h_2.scale_cols(r.as_slice()))
}

/// Same Jacobian through the explicit `((sᵀ H_1*) ⊗ H_2) D` product.
pub fn grad_y_wrt_ris_response_kron(h: &ChannelRealization, s: &CVector) -> Result<CMatrix> {
    h.validate()?;
    if s.len() != h.n_t() {
        return Err(Error::dim(format!("signal of length {} for {} antennas", s.len(), h.n_t())));
    }
    let s_row = CMatrix::from_vec(1, s.len(), s.as_slice().to_vec())?;
    let left = s_row.matmul(&h.h_1.conj())?;
    let big = kron(&left, &h.h_2)?;
    SelectionMatrixD::new(h.n_m()).right_multiply(&big)
}

/// `∂y/∂ψ_m` for layer `m` (1-based) of a SIM: column `n` is `L[:, n]·r_n`
/// with `L = H_2 Ψ_M Ξ ⋯ Ψ_{m+1} Ξ` and `r = Ξ Ψ_{m-1} ⋯ Ξ Ψ_1 H_1ᴴ s`.
pub fn grad_y_wrt_sim_layer(
    h: &ChannelRealization,
    s: &CVector,
    state: &MsState,
    stack: &DiffractionStack,
    m: usize,
) -> Result<CMatrix> {
    let big_m = stack.layers();
    if m == 0 || m > big_m {
        return Err(Error::Domain(format!("layer index {m} outside 1..={big_m}")));
    }
    let n = stack.n_elements();
    if state.len() != big_m * n {
        return Err(Error::dim(format!("SIM state of length {} for {big_m}×{n}", state.len())));
    }
    h.validate()?;
    let psi = state.response();
    let layer = |k: usize| &psi.as_slice()[(k - 1) * n..k * n];

    let mut r = h.h_1.adjoint_mul_vec(s)?;
    for k in 1..m {
        r = r.hadamard(&CVector::from_vec(layer(k).to_vec()));
        r = stack.xi(k + 1).mul_vec(&r)?;
    }
    let mut left = h.h_2.clone();
    for k in (m + 1..=big_m).rev() {
        left = left.scale_cols(layer(k)).matmul(stack.xi(k))?;
    }
    Ok(left.scale_cols(r.as_slice()))
}

/// `∂φ/∂ω = -j exp(-jω)` elementwise.
pub fn grad_response_wrt_phase(state: &MsState) -> CVector {
    state.response().iter().map(|p| C64::new(0.0, -1.0) * p).collect()
}

/// Real phase gradient from response cotangents.
pub fn phase_gradient(response: &[C64], cot: &[C64]) -> Vec<f64> {
    response
        .iter()
        .zip(cot)
        .map(|(p, c)| (c.conj() * C64::new(0.0, -1.0) * p).re)
        .collect()
}

/// Intermediate signals of one noiseless pass through the link.
#[derive(Clone, Debug)]
pub struct OtaCache {
    /// Signal reaching layer `m`'s phases, for `m = 1..=M`.
    pre: Vec<CVector>,
}

impl OtaCache {
    /// Noiseless `y` for per-element responses `response` (all layers
    /// concatenated; empty for [`Surface::None`]).
    pub fn forward(
        h: &ChannelRealization,
        surface: &Surface,
        response: &[C64],
        s: &CVector,
    ) -> Result<(CVector, OtaCache)> {
        let mut y = h.h_d.mul_vec(s)?;
        let mut pre = Vec::new();
        if let Surface::None = surface {
            return Ok((y, OtaCache { pre }));
        }
        let n = h.n_m();
        if surface.n_elements() != n || response.len() != surface.n_phases() {
            return Err(Error::dim(format!(
                "surface with {}×{} phases, channel with {n} elements, {} responses",
                surface.layers(),
                surface.n_elements(),
                response.len()
            )));
        }
        let mut a = h.h_1.adjoint_mul_vec(s)?;
        for m in 1..=surface.layers() {
            if m > 1 {
                if let Surface::Sim(_, stack) = surface {
                    a = stack.xi(m).mul_vec(&a)?;
                }
            }
            let v: CVector = a
                .iter()
                .zip(&response[(m - 1) * n..m * n])
                .map(|(x, p)| x * p)
                .collect();
            pre.push(a);
            a = v;
        }
        let cascade = h.h_2.mul_vec(&a)?;
        for (yi, ci) in y.as_mut_slice().iter_mut().zip(cascade.iter()) {
            *yi += ci;
        }
        Ok((y, OtaCache { pre }))
    }

    /// Cotangents of `s` and of every response entry given the cotangent of `y`.
    pub fn backward(
        &self,
        h: &ChannelRealization,
        surface: &Surface,
        response: &[C64],
        c_y: &CVector,
    ) -> Result<(CVector, Vec<C64>)> {
        let mut c_s = h.h_d.adjoint_mul_vec(c_y)?;
        if let Surface::None = surface {
            return Ok((c_s, Vec::new()));
        }
        let n = h.n_m();
        let layers = surface.layers();
        if self.pre.len() != layers || response.len() != layers * n {
            return Err(Error::Contract("cache does not match surface".into()));
        }
        let mut c_resp = vec![C64::new(0.0, 0.0); layers * n];
        let mut b = h.h_2.adjoint_mul_vec(c_y)?;
        for m in (1..=layers).rev() {
            let resp = &response[(m - 1) * n..m * n];
            for (ck, (a, bb)) in c_resp[(m - 1) * n..m * n]
                .iter_mut()
                .zip(self.pre[m - 1].iter().zip(b.iter()))
            {
                *ck = a.conj() * bb;
            }
            let through: CVector = b.iter().zip(resp).map(|(bb, p)| p.conj() * bb).collect();
            b = if m > 1 {
                match surface {
                    Surface::Sim(_, stack) => stack.xi(m).adjoint_mul_vec(&through)?,
                    _ => unreachable!("only a SIM has more than one layer"),
                }
            } else {
                through
            };
        }
        let from_surface = h.h_1.mul_vec(&b)?;
        for (cs, v) in c_s.as_mut_slice().iter_mut().zip(from_surface.iter()) {
            *cs += v;
        }
        Ok((c_s, c_resp))
    }
}
