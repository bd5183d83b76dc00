//! Rate-maximising link design: SVD precoding with waterfilling, surface
//! phases by projected gradient ascent, and linear receive combiners.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::metasurface::{effective_channel, phase_response, wrap_phase};
use crate::numerics::{solve, svd, CMatrix, C64};

/// `H_D + H_2 diag(e^{-jθ}) H_1ᴴ`.
pub fn phased_channel(h: &ChannelRealization, theta: &[f64]) -> Result<CMatrix> {
    if theta.len() != h.n_m() {
        return Err(Error::dim(format!(
            "{} phases for a surface of {} elements",
            theta.len(),
            h.n_m()
        )));
    }
    effective_channel(h, &CMatrix::from_diag(phase_response(theta).as_slice()))
}

/// Singular values of the phased channel, `min(N_t, N_r)` of them.
pub fn stream_gains(h: &ChannelRealization, theta: &[f64]) -> Result<Vec<f64>> {
    Ok(svd(&phased_channel(h, theta)?)?.sigma)
}

/// Power allocation `p_i = max(0, μ − σ²/g_i)` with `Σ p_i = total`.
pub fn waterfilling(gains: &[f64], total: f64, noise: f64) -> Result<Vec<f64>> {
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Domain(format!("total power must be positive, got {total}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::Domain(format!("noise power must be non-negative, got {noise}")));
    }
    if gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::Domain("stream gains must be finite and non-negative".into()));
    }
    let mut active: Vec<(usize, f64)> = gains
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > 0.0)
        .map(|(i, &g)| (i, noise / g))
        .collect();
    if active.is_empty() {
        return Err(Error::DegenerateChannel("every stream gain is zero".into()));
    }
    active.sort_by(|a, b| a.1.total_cmp(&b.1));
    // Add streams from the strongest down while the level stays above the
    // next floor.
    let mut floor_sum = 0.0;
    let mut level = 0.0;
    let mut used = 0;
    for (k, &(_, floor)) in active.iter().enumerate() {
        if k > 0 && level <= floor {
            break;
        }
        floor_sum += floor;
        used = k + 1;
        level = (total + floor_sum) / used as f64;
    }
    let mut p = vec![0.0; gains.len()];
    for &(i, floor) in &active[..used] {
        p[i] = level - floor;
    }
    Ok(p)
}

/// `Σ log₂(1 + p_i g_i / σ²)`.
pub fn sum_rate(gains: &[f64], power: &[f64], noise: f64) -> f64 {
    gains
        .iter()
        .zip(power)
        .map(|(g, p)| {
            if p * g == 0.0 {
                0.0
            } else {
                (1.0 + p * g / noise).log2()
            }
        })
        .sum()
}

/// Rate at phases `theta` under a fixed power allocation.
pub fn rate_at(h: &ChannelRealization, theta: &[f64], power: &[f64], noise: f64) -> Result<f64> {
    Ok(sum_rate(&stream_gains(h, theta)?, power, noise))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgaConfig {
    pub steps: usize,
    /// Initial move of the largest phase component, radians.
    pub step_size: f64,
    pub fd_step: f64,
}

impl Default for PgaConfig {
    fn default() -> Self {
        PgaConfig {
            steps: 20,
            step_size: 0.5,
            fd_step: 1e-6,
        }
    }
}

const MAX_BACKTRACK: usize = 30;

/// Projected gradient ascent on the rate over the phases, with a central
/// difference gradient and backtracking. Only improving steps are taken.
pub fn pga_theta(
    h: &ChannelRealization,
    power: &[f64],
    theta0: &[f64],
    noise: f64,
    cfg: &PgaConfig,
) -> Result<Vec<f64>> {
    let mut theta: Vec<f64> = theta0.iter().map(|&t| wrap_phase(t)).collect();
    if cfg.steps == 0 || theta.is_empty() {
        return Ok(theta0.to_vec());
    }
    let mut best = rate_at(h, &theta, power, noise)?;
    for _ in 0..cfg.steps {
        let mut grad = vec![0.0; theta.len()];
        let mut probe = theta.clone();
        for i in 0..theta.len() {
            probe[i] = theta[i] + cfg.fd_step;
            let up = rate_at(h, &probe, power, noise)?;
            probe[i] = theta[i] - cfg.fd_step;
            let down = rate_at(h, &probe, power, noise)?;
            probe[i] = theta[i];
            grad[i] = (up - down) / (2.0 * cfg.fd_step);
        }
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if !(scale > 0.0) {
            break;
        }
        let mut t = cfg.step_size / scale;
        let mut moved = false;
        for _ in 0..MAX_BACKTRACK {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(w, g)| wrap_phase(w + t * g)).collect();
            let r = rate_at(h, &cand, power, noise)?;
            if r > best {
                theta = cand;
                best = r;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(theta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternatingConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub pga: PgaConfig,
}

impl Default for AlternatingConfig {
    fn default() -> Self {
        AlternatingConfig {
            max_iterations: 10,
            tolerance: 1e-6,
            pga: PgaConfig::default(),
        }
    }
}

/// Surface phases and per-stream powers, with the rate after each outer
/// iteration (`history[0]` is the starting point).
#[derive(Clone, Debug, PartialEq)]
pub struct LinkDesign {
    pub theta: Vec<f64>,
    pub power: Vec<f64>,
    pub rate: f64,
    pub history: Vec<f64>,
}

/// Waterfilling for the given phases.
pub fn design_for_phases(h: &ChannelRealization, theta: &[f64], total: f64, noise: f64) -> Result<LinkDesign> {
    let gains = stream_gains(h, theta)?;
    let power = waterfilling(&gains, total, noise)?;
    let rate = sum_rate(&gains, &power, noise);
    Ok(LinkDesign {
        theta: theta.to_vec(),
        power,
        rate,
        history: vec![rate],
    })
}

/// Alternates waterfilling and phase ascent, starting from zero phases,
/// until the relative gain drops below the tolerance.
pub fn alternating_optimize(
    h: &ChannelRealization,
    total: f64,
    noise: f64,
    cfg: &AlternatingConfig,
) -> Result<LinkDesign> {
    let mut design = design_for_phases(h, &vec![0.0; h.n_m()], total, noise)?;
    for _ in 0..cfg.max_iterations {
        let theta = pga_theta(h, &design.power, &design.theta, noise, &cfg.pga)?;
        let next = design_for_phases(h, &theta, total, noise)?;
        let gain = next.rate - design.rate;
        let mut history = std::mem::take(&mut design.history);
        history.push(next.rate.max(design.rate));
        if gain > 0.0 {
            design = LinkDesign { history, ..next };
        } else {
            design.history = history;
        }
        if gain <= cfg.tolerance * design.rate.abs() {
            break;
        }
    }
    Ok(design)
}

/// Precoder, combiner and the channel they were built for.
#[derive(Clone, Debug)]
pub struct Transceiver {
    pub channel: CMatrix,
    /// `N_t × d`: the first `d` right singular vectors, each scaled by `√p_i`.
    pub precoder: CMatrix,
    /// `N_r × d` WMMSE combiner; estimates are `Wᴴ y`.
    pub combiner: CMatrix,
}

impl LinkDesign {
    pub fn transceiver(&self, h: &ChannelRealization, streams: usize, noise: f64) -> Result<Transceiver> {
        let channel = phased_channel(h, &self.theta)?;
        let dec = svd(&channel)?;
        if streams == 0 || streams > dec.sigma.len() {
            return Err(Error::Capacity(format!(
                "{streams} streams requested, the channel supports {}",
                dec.sigma.len()
            )));
        }
        let scale: Vec<C64> = self.power[..streams].iter().map(|p| C64::new(p.sqrt(), 0.0)).collect();
        let v = CMatrix::from_fn(channel.cols(), streams, |i, j| dec.v.row(i)[j]);
        let precoder = v.scale_cols(&scale);
        let combiner = wmmse_combiner(&channel.matmul(&precoder)?, noise)?;
        Ok(Transceiver {
            channel,
            precoder,
            combiner,
        })
    }
}

/// `(G Gᴴ + σ² I)⁻¹ G` for the precoded channel `G = H̄P`.
pub fn wmmse_combiner(g: &CMatrix, noise: f64) -> Result<CMatrix> {
    let mut cov = g.matmul(&g.adjoint())?;
    for i in 0..cov.rows() {
        cov[(i, i)] += noise;
    }
    solve(&cov, g)
}

pub fn matched_filter(g: &CMatrix) -> CMatrix {
    g.clone()
}

/// `G (Gᴴ G)⁻¹`.
pub fn zero_forcing(g: &CMatrix) -> Result<CMatrix> {
    let gram = g.adjoint().matmul(g)?;
    let inv = crate::numerics::inverse(&gram)?;
    g.matmul(&inv)
}

/// Per-stream `E|w_iᴴ y − z_i|²` for unit-energy independent symbols.
pub fn stream_mse(g: &CMatrix, noise: f64, w: &CMatrix) -> Result<Vec<f64>> {
    let gw = w.adjoint().matmul(g)?;
    Ok((0..w.cols())
        .map(|i| {
            let signal: f64 = (0..g.cols())
                .map(|k| {
                    let target = if k == i { 1.0 } else { 0.0 };
                    (gw[(i, k)] - target).norm_sqr()
                })
                .sum();
            let wn: f64 = (0..w.rows()).map(|r| w[(r, i)].norm_sqr()).sum();
            signal + noise * wn
        })
        .collect())
}
