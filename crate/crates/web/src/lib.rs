//! Browser bindings for three small views of the library: power
//! waterfilling, the coupling between two layers of a stacked metasurface,
//! and PSK symbol error rates.
//!
//! The plain Rust functions are what the bindings call; they are also
//! usable (and tested) natively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use minn_core::baseline::{psk_ser_approx, sum_rate, waterfilling, PskScheme};
use minn_core::metasurface::{sim_diffraction, SimSpec};
use minn_core::units::{db_to_linear, wavelength};

const CARRIER_HZ: f64 = 28e9;

/// Per-stream powers that maximise the sum rate.
pub fn waterfill_powers(gains: &[f64], total: f64, noise: f64) -> Result<Vec<f64>, String> {
    waterfilling(gains, total, noise).map_err(|e| e.to_string())
}

/// Sum rate in bit/s/Hz of a power allocation.
pub fn rate(gains: &[f64], power: &[f64], noise: f64) -> f64 {
    sum_rate(gains, power, noise)
}

/// Magnitude of the field each element of the next layer receives from
/// element `source`, row-major over the `side × side` layer and scaled so
/// the largest value is 1.
pub fn diffraction_map(side: usize, spacing_wavelengths: f64, source: usize) -> Result<Vec<f64>, String> {
    if source >= side * side {
        return Err(format!("source element {source} outside a {side}x{side} layer"));
    }
    let lam = wavelength(CARRIER_HZ);
    let spec = SimSpec {
        spacing: spacing_wavelengths * lam,
        ..SimSpec::with_defaults(2, side, lam)
    };
    let stack = sim_diffraction(&spec).map_err(|e| e.to_string())?;
    let xi = stack.matrix();
    let mags: Vec<f64> = (0..side * side).map(|dst| xi[(dst, source)].norm()).collect();
    let peak = mags.iter().copied().fold(0.0, f64::max);
    Ok(mags.into_iter().map(|m| if peak > 0.0 { m / peak } else { 0.0 }).collect())
}

/// Monte-Carlo symbol error rate of `order`-PSK at per-symbol SNR `snr_db`.
pub fn psk_ser_simulated(order: u32, snr_db: f64, trials: u32, seed: u32) -> Result<f64, String> {
    let scheme = PskScheme::new(order as u64).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    Ok(scheme.simulate_ser(db_to_linear(snr_db), trials as usize, &mut rng))
}

/// High-SNR closed-form approximation of the same error rate.
pub fn psk_ser_closed_form(order: u32, snr_db: f64) -> f64 {
    psk_ser_approx(order as u64, db_to_linear(snr_db))
}

#[wasm_bindgen(js_name = waterfill)]
pub fn waterfill_js(gains: &[f64], total: f64, noise: f64) -> Result<Vec<f64>, JsError> {
    waterfill_powers(gains, total, noise).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sumRate)]
pub fn sum_rate_js(gains: &[f64], power: &[f64], noise: f64) -> f64 {
    rate(gains, power, noise)
}

#[wasm_bindgen(js_name = diffractionMap)]
pub fn diffraction_map_js(side: usize, spacing_wavelengths: f64, source: usize) -> Result<Vec<f64>, JsError> {
    diffraction_map(side, spacing_wavelengths, source).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = pskSer)]
pub fn psk_ser_js(order: u32, snr_db: f64, trials: u32, seed: u32) -> Result<f64, JsError> {
    psk_ser_simulated(order, snr_db, trials, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = pskSerApprox)]
pub fn psk_ser_approx_js(order: u32, snr_db: f64) -> f64 {
    psk_ser_closed_form(order, snr_db)
}
