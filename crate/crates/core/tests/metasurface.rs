use std::f64::consts::PI;

use minn_core::channel::ChannelRealization;
use minn_core::metasurface::{
    add_noise, grad_response_wrt_phase, grad_y_wrt_ris_response, grad_y_wrt_ris_response_kron, grad_y_wrt_s,
    grad_y_wrt_sim_layer, phase_gradient, ris_response, sim_diffraction, sim_response, transmit, MsState,
    OtaCache, RisSpec, SimSpec, Surface,
};
use minn_core::numerics::{CMatrix, CVector, C64};
use minn_core::units::dbm_to_watts;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

fn rel_err_real(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

/// A SIM whose diffraction matrix has entries of order one, so that
/// finite differences are well conditioned.
fn unit_sim(layers: usize, side: usize) -> SimSpec {
    SimSpec {
        layers,
        side,
        spacing: 1.0,
        element_area: 1.0,
        pitch: 0.5,
        wavelength: 1.0,
    }
}

fn noiseless(h: &ChannelRealization, omega: &CMatrix, s: &CVector) -> CVector {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    transmit(h, omega, s, 0.0, &mut rng).unwrap()
}

#[test]
fn sim_single_layer_and_identity_phases() {
    let stack1 = sim_diffraction(&unit_sim(1, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let st = MsState::random(4, &mut rng);
    let ups = sim_response(&st, &stack1).unwrap();
    assert!(ups.max_abs_diff(&CMatrix::from_diag(st.response().as_slice())) < 1e-15);

    let stack2 = sim_diffraction(&unit_sim(2, 3)).unwrap();
    let ups = sim_response(&MsState::zeros(18), &stack2).unwrap();
    assert!(ups.max_abs_diff(stack2.matrix()) < 1e-15);
}

#[test]
fn sim_product_matches_left_to_right_accumulation() {
    let stack = sim_diffraction(&unit_sim(3, 3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let st = MsState::random(27, &mut rng);
    let psi = st.response();
    let diag = |m: usize| CMatrix::from_diag(&psi.as_slice()[(m - 1) * 9..m * 9]);
    // Ψ_3 · Ξ · Ψ_2 · Ξ · Ψ_1, multiplied starting from the left.
    let mut acc = diag(3);
    acc = acc.matmul(stack.matrix()).unwrap();
    acc = acc.matmul(&diag(2)).unwrap();
    acc = acc.matmul(stack.matrix()).unwrap();
    acc = acc.matmul(&diag(1)).unwrap();
    let ups = sim_response(&st, &stack).unwrap();
    assert!(rel_err(ups.as_slice(), acc.as_slice()) < 1e-12);
}

#[test]
fn diffraction_is_geometry_only() {
    let a = sim_diffraction(&SimSpec::with_defaults(3, 8, 0.0107)).unwrap();
    let b = sim_diffraction(&SimSpec::with_defaults(3, 8, 0.0107)).unwrap();
    for (x, y) in a.matrix().as_slice().iter().zip(b.matrix().as_slice()) {
        assert_eq!(x.re.to_bits(), y.re.to_bits());
        assert_eq!(x.im.to_bits(), y.im.to_bits());
    }
}

#[test]
fn transmit_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = ChannelRealization::random_unit(4, 3, 5, &mut rng);
    let s = CVector::random(3, &mut rng);
    let y = noiseless(&h, &CMatrix::zeros(5, 5), &s);
    assert!(y.max_abs_diff(&h.h_d.mul_vec(&s).unwrap()) < 1e-15);
    let omega = ris_response(&MsState::random(5, &mut rng), &RisSpec::new(5).unwrap()).unwrap();
    let y0 = noiseless(&h, &omega, &CVector::zeros(3));
    assert_eq!(y0.norm(), 0.0);

    let s1 = CVector::random(3, &mut rng);
    let s2 = CVector::random(3, &mut rng);
    let (a, b) = (C64::new(0.3, -1.2), C64::new(2.0, 0.5));
    let lhs = noiseless(&h, &omega, &s1.scale(a).add(&s2.scale(b)).unwrap());
    let rhs = noiseless(&h, &omega, &s1).scale(a).add(&noiseless(&h, &omega, &s2).scale(b)).unwrap();
    assert!(lhs.max_abs_diff(&rhs) < 1e-13);
}

#[test]
fn empirical_snr_matches_analytic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Full-scale attenuation: entries of order 10^-2.
    let h0 = ChannelRealization::random_unit(8, 4, 6, &mut rng);
    let g = 10f64.powf(-41.5 / 20.0);
    let h = ChannelRealization::new(
        h0.h_d.scale(C64::new(g, 0.0)),
        h0.h_1.scale(C64::new(g.sqrt(), 0.0)),
        h0.h_2.scale(C64::new(g.sqrt(), 0.0)),
        0,
    )
    .unwrap();
    let p = dbm_to_watts(30.0);
    let sigma2 = dbm_to_watts(-90.0);
    let u = CVector::random(4, &mut rng);
    let s = u.scale(C64::new(p.sqrt() / u.norm(), 0.0));
    let omega = ris_response(&MsState::random(6, &mut rng), &RisSpec::new(6).unwrap()).unwrap();
    let clean = noiseless(&h, &omega, &s);
    let mut noise_energy = 0.0;
    let draws = 10_000;
    for _ in 0..draws {
        let y = transmit(&h, &omega, &s, sigma2, &mut rng).unwrap();
        noise_energy += y.sub(&clean).unwrap().norm_sqr();
    }
    let empirical = clean.norm_sqr() / (noise_energy / draws as f64);
    let analytic = clean.norm_sqr() / (8.0 * sigma2);
    assert!((empirical / analytic - 1.0).abs() < 0.02, "{empirical} vs {analytic}");
}

#[test]
fn grad_wrt_signal_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = ChannelRealization::random_unit(4, 3, 5, &mut rng);
    let omega = ris_response(&MsState::random(5, &mut rng), &RisSpec::new(5).unwrap()).unwrap();
    let jac = grad_y_wrt_s(&h, &omega).unwrap();
    let s = CVector::random(3, &mut rng);
    for i in 0..3 {
        let mut sp = s.clone();
        let mut sm = s.clone();
        sp.as_mut_slice()[i] += H;
        sm.as_mut_slice()[i] -= H;
        let fd = noiseless(&h, &omega, &sp)
            .sub(&noiseless(&h, &omega, &sm))
            .unwrap()
            .scale(C64::new(0.5 / H, 0.0));
        assert!(rel_err(jac.column(i).as_slice(), fd.as_slice()) < 1e-7);
    }
    assert_eq!(grad_y_wrt_s(&h, &CMatrix::zeros(5, 5)).unwrap(), h.h_d);
}

#[test]
fn ris_jacobian_matches_fd_and_kron() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = ChannelRealization::random_unit(4, 3, 5, &mut rng);
    let s = CVector::random(3, &mut rng);
    let phi = MsState::random(5, &mut rng).response();
    let jac = grad_y_wrt_ris_response(&h, &s).unwrap();
    for n in 0..5 {
        // Holomorphic in φ_n: a real step gives the complex derivative.
        let mut pp = phi.clone();
        let mut pm = phi.clone();
        pp.as_mut_slice()[n] += H;
        pm.as_mut_slice()[n] -= H;
        let yp = noiseless(&h, &CMatrix::from_diag(pp.as_slice()), &s);
        let ym = noiseless(&h, &CMatrix::from_diag(pm.as_slice()), &s);
        let fd = yp.sub(&ym).unwrap().scale(C64::new(0.5 / H, 0.0));
        assert!(rel_err(jac.column(n).as_slice(), fd.as_slice()) < 1e-7);
        // And the imaginary direction agrees (Cauchy–Riemann).
        let mut pi = phi.clone();
        let mut mi = phi.clone();
        pi.as_mut_slice()[n] += C64::new(0.0, H);
        mi.as_mut_slice()[n] -= C64::new(0.0, H);
        let yp = noiseless(&h, &CMatrix::from_diag(pi.as_slice()), &s);
        let ym = noiseless(&h, &CMatrix::from_diag(mi.as_slice()), &s);
        let fd_i = yp.sub(&ym).unwrap().scale(C64::new(0.0, -0.5 / H));
        assert!(rel_err(jac.column(n).as_slice(), fd_i.as_slice()) < 1e-7);
    }
    let kron_form = grad_y_wrt_ris_response_kron(&h, &s).unwrap();
    assert!(jac.max_abs_diff(&kron_form) < 1e-12);
}

#[test]
fn ris_jacobian_single_element() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = ChannelRealization::random_unit(3, 2, 1, &mut rng);
    let s = CVector::random(2, &mut rng);
    let jac = grad_y_wrt_ris_response(&h, &s).unwrap();
    let r = h.h_1.adjoint_mul_vec(&s).unwrap()[0];
    assert!(jac.column(0).max_abs_diff(&h.h_2.column(0).scale(r)) < 1e-15);
}

#[test]
fn sim_layer_jacobians_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = unit_sim(3, 2);
    let stack = sim_diffraction(&spec).unwrap();
    let h = ChannelRealization::random_unit(3, 2, 4, &mut rng);
    let s = CVector::random(2, &mut rng);
    let st = MsState::random(12, &mut rng);
    let psi = st.response();
    let y_of = |resp: &CVector| {
        // Build Υ from arbitrary complex per-layer responses.
        let layer = |m: usize| CMatrix::from_diag(&resp.as_slice()[(m - 1) * 4..m * 4]);
        let mut ups = layer(1);
        for m in 2..=3 {
            ups = layer(m).matmul(&stack.matrix().matmul(&ups).unwrap()).unwrap();
        }
        noiseless(&h, &ups, &s)
    };
    for m in 1..=3 {
        let jac = grad_y_wrt_sim_layer(&h, &s, &st, &stack, m).unwrap();
        for n in 0..4 {
            let idx = (m - 1) * 4 + n;
            let mut pp = psi.clone();
            let mut pm = psi.clone();
            pp.as_mut_slice()[idx] += H;
            pm.as_mut_slice()[idx] -= H;
            let fd = y_of(&pp).sub(&y_of(&pm)).unwrap().scale(C64::new(0.5 / H, 0.0));
            assert!(rel_err(jac.column(n).as_slice(), fd.as_slice()) < 1e-7, "layer {m} element {n}");
        }
    }
    assert!(grad_y_wrt_sim_layer(&h, &s, &st, &stack, 0).is_err());
    assert!(grad_y_wrt_sim_layer(&h, &s, &st, &stack, 4).is_err());
}

#[test]
fn single_layer_sim_is_an_ris() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let stack = sim_diffraction(&unit_sim(1, 2)).unwrap();
    let h = ChannelRealization::random_unit(3, 2, 4, &mut rng);
    let s = CVector::random(2, &mut rng);
    let st = MsState::random(4, &mut rng);
    let a = grad_y_wrt_sim_layer(&h, &s, &st, &stack, 1).unwrap();
    let b = grad_y_wrt_ris_response(&h, &s).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_phase_column_norms_match_naive_cascade() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let stack = sim_diffraction(&unit_sim(3, 2)).unwrap();
    let xi = stack.matrix();
    let h = ChannelRealization::random_unit(3, 2, 4, &mut rng);
    let s = CVector::random(2, &mut rng);
    let st = MsState::zeros(12);
    // With identity phases: L = H_2 Ξ^(M-m), r = Ξ^(m-1) H_1ᴴ s, by explicit loops.
    let naive_mat_vec = |a: &CMatrix, x: &[C64]| -> Vec<C64> {
        (0..a.rows())
            .map(|i| (0..a.cols()).map(|j| a[(i, j)] * x[j]).sum())
            .collect()
    };
    for m in 1..=3usize {
        let mut r: Vec<C64> = (0..4)
            .map(|n| (0..2).map(|t| h.h_1[(t, n)].conj() * s[t]).sum())
            .collect();
        for _ in 1..m {
            r = naive_mat_vec(xi, &r);
        }
        let mut left = h.h_2.clone();
        for _ in m..3 {
            left = CMatrix::from_fn(3, 4, |i, j| (0..4).map(|k| left[(i, k)] * xi[(k, j)]).sum());
        }
        let jac = grad_y_wrt_sim_layer(&h, &s, &st, &stack, m).unwrap();
        for n in 0..4 {
            let expected = left.column(n).norm() * r[n].norm();
            assert!((jac.column(n).norm() - expected).abs() < 1e-12 * expected.max(1.0));
        }
    }
}

#[test]
fn phase_derivative_basics() {
    let d = grad_response_wrt_phase(&MsState::zeros(3));
    assert!(d.iter().all(|z| (z - C64::new(0.0, -1.0)).norm() < 1e-15));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = grad_response_wrt_phase(&MsState::random(50, &mut rng));
    assert!(d.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
}

#[test]
fn power_gradient_wrt_ris_phase_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = ChannelRealization::random_unit(4, 3, 5, &mut rng);
    let s = CVector::random(3, &mut rng);
    let spec = RisSpec::new(5).unwrap();
    let st = MsState::random(5, &mut rng);
    let power = |st: &MsState| noiseless(&h, &ris_response(st, &spec).unwrap(), &s).norm_sqr();
    let y = noiseless(&h, &ris_response(&st, &spec).unwrap(), &s);
    // J = ‖y‖², c_y = 2y, c_φ = Jacobianᴴ c_y.
    let jac = grad_y_wrt_ris_response(&h, &s).unwrap();
    let c_phi = jac.adjoint_mul_vec(&y.scale(C64::new(2.0, 0.0))).unwrap();
    let analytic = phase_gradient(st.response().as_slice(), c_phi.as_slice());
    let fd: Vec<f64> = (0..5)
        .map(|n| {
            let mut p = st.clone();
            let mut m = st.clone();
            p.phases_mut()[n] += H;
            m.phases_mut()[n] -= H;
            (power(&p) - power(&m)) / (2.0 * H)
        })
        .collect();
    assert!(rel_err_real(&analytic, &fd) < 1e-6);
}

fn vjp_check(surface: &Surface, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_m = surface.n_elements().max(1);
    let h = ChannelRealization::random_unit(3, 2, n_m, &mut rng);
    let s = CVector::random(2, &mut rng);
    let st = MsState::random(surface.n_phases(), &mut rng);
    let w = CVector::random(3, &mut rng);
    // J = Re(wᴴ y) + ‖y‖² / 2, with cotangent c_y = w + y.
    let loss = |s: &CVector, st: &MsState| {
        let (y, _) = OtaCache::forward(&h, surface, st.response().as_slice(), s).unwrap();
        w.dot_conj(&y).re + 0.5 * y.norm_sqr()
    };
    let resp = st.response();
    let (y, cache) = OtaCache::forward(&h, surface, resp.as_slice(), &s).unwrap();
    let c_y = w.add(&y).unwrap();
    let (c_s, c_resp) = cache.backward(&h, surface, resp.as_slice(), &c_y).unwrap();

    let mut fd_s = Vec::new();
    for i in 0..2 {
        for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
            let mut p = s.clone();
            let mut m = s.clone();
            p.as_mut_slice()[i] += dir * H;
            m.as_mut_slice()[i] -= dir * H;
            fd_s.push((loss(&p, &st) - loss(&m, &st)) / (2.0 * H));
        }
    }
    let an_s: Vec<f64> = c_s.iter().flat_map(|c| [c.re, c.im]).collect();

    let an_w = phase_gradient(resp.as_slice(), &c_resp);
    let fd_w: Vec<f64> = (0..st.len())
        .map(|k| {
            let mut p = st.clone();
            let mut m = st.clone();
            p.phases_mut()[k] += H;
            m.phases_mut()[k] -= H;
            (loss(&s, &p) - loss(&s, &m)) / (2.0 * H)
        })
        .collect();
    (rel_err_real(&an_s, &fd_s), if st.is_empty() { 0.0 } else { rel_err_real(&an_w, &fd_w) })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vjp_matches_fd_for_every_surface(seed in any::<u64>(), kind in 0usize..4) {
        let surface = match kind {
            0 => Surface::None,
            1 => Surface::Ris(RisSpec::new(5).unwrap()),
            2 => Surface::sim(unit_sim(2, 2)).unwrap(),
            _ => Surface::sim(unit_sim(3, 2)).unwrap(),
        };
        let (es, ew) = vjp_check(&surface, seed);
        prop_assert!(es < 1e-6, "signal gradient error {es}");
        prop_assert!(ew < 1e-6, "phase gradient error {ew}");
    }

    #[test]
    fn responses_have_unit_modulus(phases in prop::collection::vec(-100.0f64..100.0, 1..40)) {
        let st = MsState::new(phases);
        for z in st.response().iter() {
            prop_assert!((z.norm() - 1.0).abs() < 1e-12);
        }
        for w in st.wrapped() {
            prop_assert!((0.0..2.0 * PI).contains(&w));
        }
    }

    #[test]
    fn kron_and_fused_forms_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = ChannelRealization::random_unit(4, 3, 5, &mut rng);
        let s = CVector::random(3, &mut rng);
        let a = grad_y_wrt_ris_response(&h, &s).unwrap();
        let b = grad_y_wrt_ris_response_kron(&h, &s).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }
}

#[test]
fn noise_is_zero_at_zero_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let y = CVector::random(4, &mut rng);
    assert_eq!(add_noise(y.clone(), 0.0, &mut rng), y);
}
