use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MsKind, Variant};
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::metasurface::{add_noise, phase_gradient, phase_response, OtaCache, Surface, SurfaceSpec};
use crate::neuralnet::{
    cross_entropy_batch, pack_complex, read_checkpoint, unpack_complex, write_checkpoint, Activation, BranchCache,
    BranchNet, BranchSpec, Mlp, MlpCache,
};
use crate::numerics::{CVector, C64};

static MODEL_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    MODEL_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Network widths. The defaults suit 28×28 images and ten classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input_dim: usize,
    pub classes: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub controller_hidden: Vec<usize>,
    /// Width of the ReLU projection of the CSI in channel-aware networks.
    pub csi_projection: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_dim: 784,
            classes: 10,
            encoder_hidden: vec![256, 128],
            decoder_hidden: vec![256, 256],
            controller_hidden: vec![256, 256],
            csi_projection: 128,
        }
    }
}

/// Deliberate corruption of the backward pass, used to prove that the
/// gradient checker catches errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradFault {
    /// Negates the cotangent of every surface response entry.
    FlipResponseSign,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    variant: Variant,
    surface: SurfaceSpec,
    n_t: usize,
    n_r: usize,
    arch: ArchConfig,
    power_w: f64,
    noise_w: f64,
}

#[derive(Clone, Debug)]
pub struct MinnModel {
    variant: Variant,
    surface: Surface,
    n_t: usize,
    n_r: usize,
    arch: ArchConfig,
    encoder: BranchNet,
    decoder: BranchNet,
    controller: Option<Mlp>,
    phases: Option<Vec<f64>>,
    power: f64,
    noise: f64,
    fault: Option<GradFault>,
    generation: u64,
}

/// Everything [`MinnModel::backward`] needs from a forward pass.
pub struct MinnCache<'a> {
    generation: u64,
    channels: Vec<&'a ChannelRealization>,
    enc: BranchCache,
    /// Encoder outputs before normalisation.
    raw: Vec<CVector>,
    ctrl: Option<MlpCache>,
    /// Surface responses per sample (one shared entry for fixed phases).
    responses: Vec<CVector>,
    ota: Vec<OtaCache>,
    /// Transmitted signals and the realised noise.
    pub signals: Vec<CVector>,
    pub noise: Vec<CVector>,
    dec: BranchCache,
}

/// `s = √P · u / ‖u‖`.
pub fn power_normalize(u: &CVector, power: f64) -> Result<CVector> {
    let n = u.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateInput(format!(
            "cannot normalise a signal of norm {n}"
        )));
    }
    Ok(u.scale(C64::new(power.sqrt() / n, 0.0)))
}

/// Cotangent of `u` from the cotangent of `s = √P u/‖u‖`: the radial
/// component is removed and the rest scaled by `√P/‖u‖`.
pub fn power_normalize_backward(u: &CVector, power: f64, c_s: &CVector) -> CVector {
    let n = u.norm();
    let radial: f64 = u.iter().zip(c_s.iter()).map(|(a, c)| (a.conj() * c).re).sum::<f64>() / (n * n);
    let k = power.sqrt() / n;
    c_s.iter().zip(u.iter()).map(|(c, a)| (c - a * radial) * k).collect()
}

impl MinnModel {
    /// Builds a model with zero parameters; call [`MinnModel::init`] before use.
    pub fn new(
        variant: Variant,
        surface: Surface,
        n_t: usize,
        n_r: usize,
        arch: ArchConfig,
        power: f64,
        noise: f64,
    ) -> Result<Self> {
        let surface_kind = match surface {
            Surface::None => MsKind::None,
            Surface::Ris(_) => MsKind::Ris,
            Surface::Sim(..) => MsKind::Sim,
        };
        if surface_kind != variant.kind {
            return Err(Error::Contract(format!(
                "variant {variant} does not match the supplied surface"
            )));
        }
        if n_t == 0 || n_r == 0 {
            return Err(Error::Domain("antenna counts must be positive".into()));
        }
        if !(power > 0.0) || !(noise >= 0.0) {
            return Err(Error::Domain("power must be positive and noise non-negative".into()));
        }
        let csi_dim = csi_dim(&surface, n_t, n_r);
        let side = variant.csi_aware().then_some((csi_dim, arch.csi_projection));
        let encoder = BranchNet::new(BranchSpec {
            primary: arch.input_dim,
            norm_primary: false,
            side,
            hidden: arch.encoder_hidden.clone(),
            outputs: 2 * n_t,
            output: Activation::Linear,
        })?;
        let decoder = BranchNet::new(BranchSpec {
            primary: 2 * n_r,
            norm_primary: true,
            side,
            hidden: arch.decoder_hidden.clone(),
            outputs: arch.classes,
            output: Activation::Softmax,
        })?;
        let controller = if variant.has_controller() {
            let mut widths = vec![csi_dim];
            widths.extend(&arch.controller_hidden);
            widths.push(surface.n_phases());
            Some(Mlp::chain(&widths, Activation::Linear, true)?)
        } else {
            None
        };
        let phases = variant.has_fixed_phases().then(|| vec![0.0; surface.n_phases()]);
        Ok(MinnModel {
            variant,
            surface,
            n_t,
            n_r,
            arch,
            encoder,
            decoder,
            controller,
            phases,
            power,
            noise,
            fault: None,
            generation: next_generation(),
        })
    }

    /// Random network weights and phases uniform on `[0, 2π)`.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.decoder.init(rng);
        self.encoder.init(rng);
        if let Some(c) = &mut self.controller {
            c.init(rng);
        }
        if let Some(p) = &mut self.phases {
            for w in p.iter_mut() {
                *w = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            }
        }
        self.generation = next_generation();
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn surface(&self) -> &Surface {
        &self.surface
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn set_power(&mut self, watts: f64) {
        self.power = watts;
    }

    pub fn set_noise(&mut self, watts: f64) {
        self.noise = watts;
    }

    #[doc(hidden)]
    pub fn set_fault(&mut self, fault: Option<GradFault>) {
        self.fault = fault;
    }

    pub fn phases(&self) -> Option<&[f64]> {
        self.phases.as_deref()
    }

    pub fn csi_dim(&self) -> usize {
        csi_dim(&self.surface, self.n_t, self.n_r)
    }

    /// Named parameter blocks in the order of the flat parameter vector:
    /// decoder, encoder, then controller or phases (split per SIM layer).
    pub fn param_blocks(&self) -> Vec<(String, Range<usize>)> {
        let mut blocks = Vec::new();
        let mut at = 0;
        let mut push = |name: String, len: usize| {
            blocks.push((name, at..at + len));
            at += len;
        };
        push("decoder".into(), self.decoder.n_params());
        push("encoder".into(), self.encoder.n_params());
        if let Some(c) = &self.controller {
            push("controller".into(), c.n_params());
        }
        if let Some(p) = &self.phases {
            let layers = self.surface.layers();
            let per = p.len() / layers.max(1);
            for m in 1..=layers {
                let name = if self.variant.kind == MsKind::Sim {
                    format!("phases[layer {m}]")
                } else {
                    "phases".into()
                };
                push(name, per);
            }
        }
        blocks
    }

    pub fn n_params(&self) -> usize {
        self.decoder.n_params()
            + self.encoder.n_params()
            + self.controller.as_ref().map_or(0, Mlp::n_params)
            + self.phases.as_ref().map_or(0, Vec::len)
    }

    /// Index where the surface phases start (no weight decay beyond it).
    pub fn phase_offset(&self) -> usize {
        self.n_params() - self.phases.as_ref().map_or(0, Vec::len)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend(self.decoder.params());
        p.extend(self.encoder.params());
        if let Some(c) = &self.controller {
            p.extend_from_slice(c.params());
        }
        if let Some(ph) = &self.phases {
            p.extend_from_slice(ph);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::dim(format!(
                "{} parameters for a model with {}",
                p.len(),
                self.n_params()
            )));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &p[at..at + n];
            at += n;
            s
        };
        self.decoder.set_params(take(self.decoder.n_params()))?;
        self.encoder.set_params(take(self.encoder.n_params()))?;
        if let Some(c) = &mut self.controller {
            let n = c.n_params();
            c.set_params(take(n))?;
        }
        if let Some(ph) = &mut self.phases {
            let n = ph.len();
            ph.copy_from_slice(take(n));
        }
        self.generation = next_generation();
        Ok(())
    }

    fn csi_batch(&self, channels: &[&ChannelRealization]) -> Array2<f64> {
        let d = self.csi_dim();
        let mut out = Array2::zeros((channels.len(), d));
        for (mut row, h) in out.rows_mut().into_iter().zip(channels) {
            let mut v = pack_complex(h.h_d.as_slice());
            if self.variant.kind != MsKind::None {
                v.extend(pack_complex(h.h_1.as_slice()));
                v.extend(pack_complex(h.h_2.as_slice()));
            }
            row.assign(&ndarray::ArrayView1::from(&v[..]));
        }
        out
    }

    /// Class probabilities for a batch of inputs, one channel per row.
    pub fn forward<'a, R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        channels: &[&'a ChannelRealization],
        rng: &mut R,
    ) -> Result<(Array2<f64>, MinnCache<'a>)> {
        let b = x.nrows();
        if channels.len() != b {
            return Err(Error::dim(format!("{} channels for a batch of {b}", channels.len())));
        }
        for h in channels {
            if h.n_t() != self.n_t || h.n_r() != self.n_r {
                return Err(Error::Contract(format!(
                    "channel is {}×{}, model expects {}×{}",
                    h.n_r(),
                    h.n_t(),
                    self.n_r,
                    self.n_t
                )));
            }
            if self.variant.kind != MsKind::None && h.n_m() != self.surface.n_elements() {
                return Err(Error::Contract(format!(
                    "channel has {} surface elements, model has {}",
                    h.n_m(),
                    self.surface.n_elements()
                )));
            }
        }
        let aware = self.variant.csi_aware();
        let csi = (aware || self.controller.is_some()).then(|| self.csi_batch(channels));
        let side = if aware { csi.as_ref().map(|c| c.view()) } else { None };

        let (enc_out, enc) = self.encoder.forward(x, side)?;
        let mut raw = Vec::with_capacity(b);
        let mut signals = Vec::with_capacity(b);
        for row in enc_out.rows() {
            let u = unpack_complex(&row.to_vec())?;
            signals.push(power_normalize(&u, self.power)?);
            raw.push(u);
        }

        let (ctrl, responses) = match (&self.controller, &self.phases) {
            (Some(net), _) => {
                let (omega, c) = net.forward(csi.as_ref().expect("controller needs CSI").view())?;
                let r = omega
                    .rows()
                    .into_iter()
                    .map(|w| phase_response(&w.to_vec()))
                    .collect();
                (Some(c), r)
            }
            (None, Some(ph)) => (None, vec![phase_response(ph)]),
            (None, None) => (None, vec![CVector::zeros(0)]),
        };

        let mut ota = Vec::with_capacity(b);
        let mut noise = Vec::with_capacity(b);
        let mut dec_in = Array2::zeros((b, 2 * self.n_r));
        for (i, (h, s)) in channels.iter().zip(&signals).enumerate() {
            let resp = &responses[i.min(responses.len() - 1)];
            let (y_clean, cache) = OtaCache::forward(h, &self.surface, resp.as_slice(), s)?;
            let y = add_noise(y_clean.clone(), self.noise, rng);
            noise.push(y.sub(&y_clean)?);
            dec_in
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&pack_complex(y.as_slice())[..]));
            ota.push(cache);
        }
        let (probs, dec) = self.decoder.forward(dec_in.view(), side)?;
        Ok((
            probs,
            MinnCache {
                generation: self.generation,
                channels: channels.to_vec(),
                enc,
                raw,
                ctrl,
                responses,
                ota,
                signals,
                noise,
                dec,
            },
        ))
    }

    /// Gradient of `Σ_rows upstream · ô` with respect to every parameter,
    /// laid out as [`MinnModel::params`].
    pub fn backward(&self, cache: &MinnCache<'_>, upstream: ArrayView2<f64>) -> Result<Vec<f64>> {
        if cache.generation != self.generation {
            return Err(Error::Contract("model cache is stale".into()));
        }
        let mut grad = vec![0.0; self.n_params()];
        let nd = self.decoder.n_params();
        let ne = self.encoder.n_params();
        let (gd, rest) = grad.split_at_mut(nd);
        let (ge, gm) = rest.split_at_mut(ne);

        let d_y = self.decoder.backward_into(&cache.dec, upstream, gd)?;
        let b = cache.channels.len();
        let n_ph = self.surface.n_phases();
        let mut d_omega = Array2::zeros((if self.controller.is_some() { b } else { 0 }, n_ph));
        let mut d_u = Array2::zeros((b, 2 * self.n_t));
        for i in 0..b {
            let c_y = unpack_complex(&d_y.row(i).to_vec())?;
            let resp = &cache.responses[i.min(cache.responses.len() - 1)];
            let (c_s, mut c_resp) = cache.ota[i].backward(cache.channels[i], &self.surface, resp.as_slice(), &c_y)?;
            if self.fault == Some(GradFault::FlipResponseSign) {
                for c in c_resp.iter_mut() {
                    *c = -*c;
                }
            }
            if !c_resp.is_empty() {
                let g = phase_gradient(resp.as_slice(), &c_resp);
                if self.controller.is_some() {
                    d_omega.row_mut(i).assign(&ndarray::ArrayView1::from(&g[..]));
                } else {
                    for (acc, v) in gm.iter_mut().zip(&g) {
                        *acc += v;
                    }
                }
            }
            let c_u = power_normalize_backward(&cache.raw[i], self.power, &c_s);
            d_u.row_mut(i)
                .assign(&ndarray::ArrayView1::from(&pack_complex(c_u.as_slice())[..]));
        }
        if let (Some(net), Some(c)) = (&self.controller, &cache.ctrl) {
            net.backward_into(c, d_omega.view(), gm)?;
        }
        self.encoder.backward_into(&cache.enc, d_u.view(), ge)?;
        Ok(grad)
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
        channels: &[&ChannelRealization],
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        let (probs, cache) = self.forward(x, channels, rng)?;
        let (loss, up, _) = cross_entropy_batch(labels, probs.view())?;
        let grad = self.backward(&cache, up.view())?;
        Ok((loss, grad))
    }

    pub fn loss<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
        channels: &[&ChannelRealization],
        rng: &mut R,
    ) -> Result<f64> {
        let (probs, _) = self.forward(x, channels, rng)?;
        Ok(cross_entropy_batch(labels, probs.view())?.0)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let desc = Descriptor {
            variant: self.variant,
            surface: self.surface.spec(),
            n_t: self.n_t,
            n_r: self.n_r,
            arch: self.arch.clone(),
            power_w: self.power,
            noise_w: self.noise,
        };
        let value = serde_json::to_value(&desc).map_err(|e| Error::format(path, e.to_string()))?;
        write_checkpoint(path, &value, &self.params())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let (value, params) = read_checkpoint(path)?;
        let d: Descriptor = serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))?;
        let surface = Surface::from_spec(&d.surface)?;
        let mut m = MinnModel::new(d.variant, surface, d.n_t, d.n_r, d.arch, d.power_w, d.noise_w)?;
        m.set_params(&params)
            .map_err(|e| Error::format(path, format!("parameter count does not match architecture: {e}")))?;
        Ok(m)
    }
}

fn csi_dim(surface: &Surface, n_t: usize, n_r: usize) -> usize {
    let n_m = surface.n_elements();
    match surface {
        Surface::None => 2 * n_r * n_t,
        _ => 2 * (n_r * n_t + n_t * n_m + n_r * n_m),
    }
}
