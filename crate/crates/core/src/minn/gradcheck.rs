//! Finite-difference verification of [`MinnModel::backward`] on tiny models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ArchConfig, GradFault, MinnModel, MsKind, Variant};
use crate::channel::ChannelRealization;
use crate::error::Result;
use crate::metasurface::{RisSpec, SimSpec, Surface};

/// Step of the fourth-order central difference
/// `(f(-2h) - 8f(-h) + 8f(h) - f(2h)) / 12h`.
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-6;

const N_ANT: usize = 2;
const SIDE: usize = 2;
const BATCH: usize = 3;
const CLASSES: usize = 3;
const MAX_DRAWS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradBlockReport {
    pub variant: String,
    pub block: String,
    pub params: usize,
    pub rel_error: f64,
    pub passed: bool,
}

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        input_dim: 3,
        classes: CLASSES,
        encoder_hidden: vec![4],
        decoder_hidden: vec![4],
        controller_hidden: vec![3],
        csi_projection: 3,
    }
}

fn tiny_surface(kind: MsKind, sim_layers: usize) -> Result<Surface> {
    Ok(match kind {
        MsKind::None => Surface::None,
        MsKind::Ris => Surface::Ris(RisSpec::new(SIDE * SIDE)?),
        MsKind::Sim => Surface::sim(SimSpec::with_defaults(sim_layers, SIDE, 0.01))?,
    })
}

fn label(variant: Variant, sim_layers: usize) -> String {
    if variant.kind == MsKind::Sim {
        format!("{variant} (M={sim_layers})")
    } else {
        variant.to_string()
    }
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares the analytic gradient of the noiseless mean cross-entropy with
/// central differences, block by block.
pub fn grad_check_variant(
    variant: Variant,
    sim_layers: usize,
    seed: u64,
    fault: Option<GradFault>,
) -> Result<Vec<GradBlockReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = tiny_surface(variant.kind, sim_layers)?;
    let n_m = surface.n_elements().max(1);
    let mut model = MinnModel::new(variant, surface, N_ANT, N_ANT, tiny_arch(), 1.0, 0.0)?;
    let labels: Vec<usize> = (0..BATCH).map(|i| i % CLASSES).collect();
    model.set_fault(fault);
    let blocks = model.param_blocks();
    // Random biases keep every ReLU away from its kink at exactly zero. A
    // draw in which some block has an identically zero gradient (every
    // downstream unit dead) would compare nothing, so it is redrawn.
    let mut draws = 0;
    let (params, x, chans, analytic) = loop {
        let params: Vec<f64> = (0..model.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.set_params(&params)?;
        let x = ndarray::Array2::from_shape_fn((BATCH, 3), |_| rng.random_range(0.0..1.0));
        let chans: Vec<ChannelRealization> = (0..BATCH)
            .map(|_| ChannelRealization::random_unit(N_ANT, N_ANT, n_m, &mut rng))
            .collect();
        let refs: Vec<&ChannelRealization> = chans.iter().collect();
        let (_, analytic) = model.loss_and_grad(x.view(), &labels, &refs, &mut rng)?;
        draws += 1;
        let informative = blocks.iter().all(|(_, r)| analytic[r.clone()].iter().any(|g| *g != 0.0));
        if informative || draws == MAX_DRAWS {
            break (params, x, chans, analytic);
        }
    };
    let refs: Vec<&ChannelRealization> = chans.iter().collect();

    let mut probe = model.clone();
    let mut p = params.clone();
    let mut numeric = vec![0.0; p.len()];
    for i in 0..p.len() {
        let mut at = |k: f64| -> Result<f64> {
            p[i] = params[i] + k * GRADCHECK_STEP;
            probe.set_params(&p)?;
            probe.loss(x.view(), &labels, &refs, &mut rng)
        };
        let (m2, m1, p1, p2) = (at(-2.0)?, at(-1.0)?, at(1.0)?, at(2.0)?);
        p[i] = params[i];
        numeric[i] = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * GRADCHECK_STEP);
    }

    let name = label(variant, sim_layers);
    Ok(blocks
        .into_iter()
        .map(|(block, r)| {
            let e = rel_error(&analytic[r.clone()], &numeric[r.clone()]);
            GradBlockReport {
                variant: name.clone(),
                block,
                params: r.len(),
                rel_error: e,
                passed: e < GRADCHECK_TOL,
            }
        })
        .collect())
}

/// Every variant, with the SIM checked at two and three layers.
pub fn grad_check_suite(seed: u64, fault: Option<GradFault>) -> Result<Vec<GradBlockReport>> {
    let mut out = Vec::new();
    for (k, v) in Variant::all().into_iter().enumerate() {
        let depths: &[usize] = if v.kind == MsKind::Sim { &[2, 3] } else { &[1] };
        for &m in depths {
            out.extend(grad_check_variant(v, m, seed.wrapping_add(k as u64 * 31 + m as u64), fault)?);
        }
    }
    Ok(out)
}
