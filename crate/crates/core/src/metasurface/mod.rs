//! Reflective (RIS) and stacked diffractive (SIM) metasurfaces and the
//! over-the-air transmission through them.
//!
//! A surface is parameterised by real phases `ω`; its per-element response
//! is `exp(-jω)`. An RIS contributes `Ω = diag(exp(-jθ))`; an `M`-layer SIM
//! contributes `Ψ_M Ξ Ψ_{M-1} Ξ ⋯ Ξ Ψ_1` with `Ψ_m = diag(exp(-jϑ_m))` and a
//! fixed inter-layer diffraction matrix `Ξ`.

mod jacobian;

pub use jacobian::{
    grad_response_wrt_phase, grad_y_wrt_ris_response, grad_y_wrt_ris_response_kron, grad_y_wrt_s,
    grad_y_wrt_sim_layer, phase_gradient, OtaCache,
};

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::numerics::{complex_normal, CMatrix, CVector, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RisSpec {
    pub n_elements: usize,
}

impl RisSpec {
    pub fn new(n_elements: usize) -> Result<Self> {
        if n_elements == 0 {
            return Err(Error::Domain("an RIS needs at least one element".into()));
        }
        Ok(RisSpec { n_elements })
    }
}

/// Geometry of a stack of identical square layers facing each other.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub layers: usize,
    /// Elements along one side of a layer; a layer holds `side²` elements.
    pub side: usize,
    /// Distance between adjacent layers, metres.
    pub spacing: f64,
    /// Element area, m².
    pub element_area: f64,
    /// Element pitch within a layer, metres.
    pub pitch: f64,
    pub wavelength: f64,
}

impl SimSpec {
    /// Half-wavelength pitch, `λ²/4` element area and `5λ` layer spacing.
    pub fn with_defaults(layers: usize, side: usize, wavelength: f64) -> Self {
        SimSpec {
            layers,
            side,
            spacing: 5.0 * wavelength,
            element_area: wavelength * wavelength / 4.0,
            pitch: wavelength / 2.0,
            wavelength,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.side * self.side
    }

    /// Distance from the first to the last layer.
    pub fn depth(&self) -> f64 {
        (self.layers.saturating_sub(1)) as f64 * self.spacing
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.side == 0 {
            return Err(Error::Domain("SIM needs at least one layer and one element".into()));
        }
        if !(self.spacing > 0.0 && self.element_area > 0.0 && self.pitch > 0.0 && self.wavelength > 0.0) {
            return Err(Error::Domain("SIM spacing, area, pitch and wavelength must be positive".into()));
        }
        Ok(())
    }
}

/// Phase configuration of a surface (all layers concatenated for a SIM).
#[derive(Clone, Debug, PartialEq)]
pub struct MsState {
    phases: Vec<f64>,
}

impl MsState {
    pub fn new(phases: Vec<f64>) -> Self {
        MsState { phases }
    }

    pub fn zeros(n: usize) -> Self {
        MsState { phases: vec![0.0; n] }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        MsState {
            phases: (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn phases_mut(&mut self) -> &mut [f64] {
        &mut self.phases
    }

    /// Phases reduced to `[0, 2π)`.
    pub fn wrapped(&self) -> Vec<f64> {
        self.phases.iter().map(|&w| wrap_phase(w)).collect()
    }

    /// `exp(-jω)` elementwise.
    pub fn response(&self) -> CVector {
        phase_response(&self.phases)
    }
}

pub fn wrap_phase(w: f64) -> f64 {
    let r = w.rem_euclid(2.0 * PI);
    if r >= 2.0 * PI {
        0.0
    } else {
        r
    }
}

pub fn phase_response(phases: &[f64]) -> CVector {
    phases.iter().map(|&w| C64::from_polar(1.0, -w)).collect()
}

/// Inter-layer propagation of a SIM. All layers share one geometry, so one
/// matrix serves every layer transition.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffractionStack {
    layers: usize,
    xi: Arc<CMatrix>,
}

impl DiffractionStack {
    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn n_elements(&self) -> usize {
        self.xi.rows()
    }

    /// Propagation from layer `m-1` into layer `m`, for `2 ≤ m ≤ M`.
    pub fn xi(&self, m: usize) -> &CMatrix {
        debug_assert!(m >= 2 && m <= self.layers);
        &self.xi
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.xi
    }
}

/// Rayleigh–Sommerfeld coefficient between two elements `d` metres apart.
pub fn diffraction_coefficient(d: f64, spec: &SimSpec) -> C64 {
    let lambda = spec.wavelength;
    let amp = spec.spacing * spec.element_area / (d * d);
    C64::new(1.0 / (2.0 * PI * d), -1.0 / lambda) * amp * C64::from_polar(1.0, 2.0 * PI * d / lambda)
}

pub fn sim_diffraction(spec: &SimSpec) -> Result<DiffractionStack> {
    spec.validate()?;
    let side = spec.side;
    let n = side * side;
    let mut xi = CMatrix::zeros(n, n);
    for dst in 0..n {
        let (r1, c1) = ((dst / side) as f64, (dst % side) as f64);
        for src in 0..n {
            let (r0, c0) = ((src / side) as f64, (src % side) as f64);
            let lateral2 = ((r1 - r0).powi(2) + (c1 - c0).powi(2)) * spec.pitch * spec.pitch;
            let d = (spec.spacing * spec.spacing + lateral2).sqrt();
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Geometry("coincident elements on adjacent layers".into()));
            }
            xi[(dst, src)] = diffraction_coefficient(d, spec);
        }
    }
    if !xi.is_finite() {
        return Err(Error::Geometry("diffraction matrix is not finite".into()));
    }
    Ok(DiffractionStack {
        layers: spec.layers,
        xi: Arc::new(xi),
    })
}

/// `Ω = diag(exp(-jθ))`.
pub fn ris_response(state: &MsState, spec: &RisSpec) -> Result<CMatrix> {
    if state.len() != spec.n_elements {
        return Err(Error::dim(format!(
            "RIS with {} elements given {} phases",
            spec.n_elements,
            state.len()
        )));
    }
    Ok(CMatrix::from_diag(state.response().as_slice()))
}

/// `Υ = Ψ_M Ξ ⋯ Ψ_2 Ξ Ψ_1`.
pub fn sim_response(state: &MsState, stack: &DiffractionStack) -> Result<CMatrix> {
    let n = stack.n_elements();
    if state.len() != stack.layers * n {
        return Err(Error::dim(format!(
            "SIM with {} layers of {} elements given {} phases",
            stack.layers,
            n,
            state.len()
        )));
    }
    let psi = state.response();
    let layer = |m: usize| &psi.as_slice()[(m - 1) * n..m * n];
    let mut acc = CMatrix::from_diag(layer(1));
    for m in 2..=stack.layers {
        acc = stack.xi(m).matmul(&acc)?.scale_rows(layer(m));
    }
    Ok(acc)
}

/// Serialisable description of a [`Surface`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SurfaceSpec {
    None,
    Ris { n_elements: usize },
    Sim(SimSpec),
}

/// The surface in the link, if any.
#[derive(Clone, Debug, PartialEq)]
pub enum Surface {
    None,
    Ris(RisSpec),
    Sim(SimSpec, DiffractionStack),
}

impl Surface {
    pub fn sim(spec: SimSpec) -> Result<Self> {
        let stack = sim_diffraction(&spec)?;
        Ok(Surface::Sim(spec, stack))
    }

    pub fn from_spec(spec: &SurfaceSpec) -> Result<Self> {
        match *spec {
            SurfaceSpec::None => Ok(Surface::None),
            SurfaceSpec::Ris { n_elements } => Ok(Surface::Ris(RisSpec::new(n_elements)?)),
            SurfaceSpec::Sim(s) => Surface::sim(s),
        }
    }

    pub fn spec(&self) -> SurfaceSpec {
        match self {
            Surface::None => SurfaceSpec::None,
            Surface::Ris(r) => SurfaceSpec::Ris { n_elements: r.n_elements },
            Surface::Sim(s, _) => SurfaceSpec::Sim(*s),
        }
    }

    /// Elements per layer.
    pub fn n_elements(&self) -> usize {
        match self {
            Surface::None => 0,
            Surface::Ris(r) => r.n_elements,
            Surface::Sim(s, _) => s.n_elements(),
        }
    }

    pub fn layers(&self) -> usize {
        match self {
            Surface::None => 0,
            Surface::Ris(_) => 1,
            Surface::Sim(s, _) => s.layers,
        }
    }

    /// Number of tunable phases.
    pub fn n_phases(&self) -> usize {
        self.n_elements() * self.layers()
    }

    /// `Ω` for a phase configuration; the zero matrix when there is no surface.
    pub fn response_matrix(&self, state: &MsState, n_m: usize) -> Result<CMatrix> {
        match self {
            Surface::None => Ok(CMatrix::zeros(n_m, n_m)),
            Surface::Ris(spec) => ris_response(state, spec),
            Surface::Sim(_, stack) => sim_response(state, stack),
        }
    }
}

/// `H_D + H_2 Ω H_1ᴴ`.
pub fn effective_channel(h: &ChannelRealization, omega: &CMatrix) -> Result<CMatrix> {
    h.validate()?;
    let cascade = h.h_2.matmul(omega)?.matmul(&h.h_1.adjoint())?;
    h.h_d.add(&cascade)
}

/// `y = (H_D + H_2 Ω H_1ᴴ) s + n` with `n ~ CN(0, σ² I)`.
pub fn transmit<R: Rng + ?Sized>(
    h: &ChannelRealization,
    omega: &CMatrix,
    s: &CVector,
    noise_power: f64,
    rng: &mut R,
) -> Result<CVector> {
    if !(noise_power >= 0.0) {
        return Err(Error::Domain(format!("noise power must be non-negative, got {noise_power}")));
    }
    let y = effective_channel(h, omega)?.mul_vec(s)?;
    Ok(add_noise(y, noise_power, rng))
}

pub fn add_noise<R: Rng + ?Sized>(mut y: CVector, noise_power: f64, rng: &mut R) -> CVector {
    if noise_power > 0.0 {
        for v in y.as_mut_slice() {
            *v += complex_normal(rng, noise_power);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(layers: usize, side: usize) -> SimSpec {
        SimSpec::with_defaults(layers, side, 0.0107)
    }

    #[test]
    fn ris_zero_and_pi() {
        let r = RisSpec::new(4).unwrap();
        assert!(ris_response(&MsState::zeros(4), &r).unwrap().max_abs_diff(&CMatrix::identity(4)) < 1e-15);
        let neg = ris_response(&MsState::new(vec![PI; 4]), &r).unwrap();
        assert!(neg.max_abs_diff(&CMatrix::identity(4).scale(C64::new(-1.0, 0.0))) < 1e-15);
        assert!(matches!(ris_response(&MsState::zeros(3), &r), Err(Error::Dimension(_))));
    }

    #[test]
    fn ris_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = MsState::random(9, &mut rng);
        let o = ris_response(&st, &RisSpec::new(9).unwrap()).unwrap();
        let g = o.adjoint().matmul(&o).unwrap();
        assert!(g.max_abs_diff(&CMatrix::identity(9)) < 1e-12);
    }

    #[test]
    fn aligned_entry_matches_formula() {
        let s = spec(2, 3);
        let stack = sim_diffraction(&s).unwrap();
        let d = s.spacing;
        let lambda = s.wavelength;
        let expected = C64::new(1.0 / (2.0 * PI * d), -1.0 / lambda)
            * (s.element_area / d)
            * C64::from_polar(1.0, 2.0 * PI * d / lambda);
        for n in 0..9 {
            assert!((stack.matrix()[(n, n)] - expected).norm() < 1e-12 * expected.norm());
        }
    }

    #[test]
    fn magnitude_decreases_with_offset() {
        let stack = sim_diffraction(&spec(2, 8)).unwrap();
        let row: Vec<f64> = (0..8).map(|c| stack.matrix()[(0, c)].norm()).collect();
        assert!(row.windows(2).all(|w| w[1] < w[0]), "{row:?}");
    }

    #[test]
    fn full_stack_is_finite_and_peaks_on_diagonal() {
        let stack = sim_diffraction(&spec(3, 8)).unwrap();
        let xi = stack.matrix();
        assert_eq!(xi.shape(), (64, 64));
        assert!(xi.is_finite());
        for i in 0..64 {
            let diag = xi[(i, i)].norm();
            assert!((0..64).all(|j| xi[(i, j)].norm() <= diag * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn wrapping() {
        assert!((wrap_phase(-0.5) - (2.0 * PI - 0.5)).abs() < 1e-15);
        assert!((wrap_phase(7.0) - (7.0 - 2.0 * PI)).abs() < 1e-15);
        assert_eq!(wrap_phase(0.0), 0.0);
    }
}
