//! Two-value image compressor and the image classifier.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledImageSet;
use crate::error::{Error, Result};
use crate::neuralnet::{adam_step, cross_entropy_batch, Activation, AdamConfig, AdamState, Mlp};

/// Width of the compressed representation.
pub const LATENT_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Largest random translation, in pixels, applied to each training image
    /// of the classifier (square images only).
    #[serde(default)]
    pub max_shift: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_shift: 0,
            epochs: 20,
            batch_size: 64,
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// Shuffled minibatch loop shared by both networks. `step` returns the batch
/// loss and fills the gradient.
fn fit(
    n_params: usize,
    params: &mut Vec<f64>,
    images: &LabeledImageSet,
    cfg: &FitConfig,
    mut step: impl FnMut(&[f64], &[usize], &mut [f64], &mut ChaCha8Rng) -> Result<f64>,
) -> Result<Vec<f64>> {
    if images.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Config("fitting needs images and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(n_params, cfg.optimizer);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; n_params];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = step(params, idx, &mut grad, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss became {loss}")));
            }
            total += loss * idx.len() as f64;
            adam_step(&mut adam, params, &grad)?;
        }
        history.push(total / images.len() as f64);
    }
    Ok(history)
}

#[derive(Clone, Debug)]
pub struct Autoencoder {
    encoder: Mlp,
    decoder: Mlp,
}

impl Autoencoder {
    pub fn new(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend(hidden);
        widths.push(LATENT_DIM);
        let encoder = Mlp::chain(&widths, Activation::Linear, false)?;
        widths.reverse();
        let decoder = Mlp::chain(&widths, Activation::Linear, false)?;
        Ok(Autoencoder { encoder, decoder })
    }

    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.encoder.init(&mut rng);
        self.decoder.init(&mut rng);
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn params(&self) -> Vec<f64> {
        [self.encoder.params(), self.decoder.params()].concat()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let ne = self.encoder.n_params();
        if p.len() != ne + self.decoder.n_params() {
            return Err(Error::dim("autoencoder parameter count mismatch"));
        }
        self.encoder.set_params(&p[..ne])?;
        self.decoder.set_params(&p[ne..])
    }

    /// Minimises the mean squared reconstruction error; returns the mean
    /// loss of every epoch.
    pub fn train(&mut self, images: &LabeledImageSet, cfg: &FitConfig) -> Result<Vec<f64>> {
        let ne = self.encoder.n_params();
        let n = ne + self.decoder.n_params();
        let mut params = self.params();
        let mut enc = self.encoder.clone();
        let mut dec = self.decoder.clone();
        let history = fit(n, &mut params, images, cfg, |p, idx, grad, _| {
            enc.set_params(&p[..ne])?;
            dec.set_params(&p[ne..])?;
            let x = images.batch(idx);
            let (z, ec) = enc.forward(x.view())?;
            let (xh, dc) = dec.forward(z.view())?;
            let diff = &xh - &x;
            let count = diff.len() as f64;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
            let up = diff * (2.0 / count);
            let (ge, gd) = grad.split_at_mut(ne);
            let dz = dec.backward_into(&dc, up.view(), gd)?;
            enc.backward_into(&ec, dz.view(), ge)?;
            Ok(loss)
        })?;
        self.set_params(&params)?;
        Ok(history)
    }

    /// The latent of one image, rounded to single precision for transmission.
    pub fn compress(&self, image: &[f64]) -> Result<[f32; 2]> {
        let z = self.encoder.forward_one(image)?;
        Ok([z[0] as f32, z[1] as f32])
    }

    /// Reconstruction clipped to the valid pixel range.
    pub fn decompress(&self, latent: [f32; 2]) -> Result<Vec<f64>> {
        let x = self.decoder.forward_one(&[latent[0] as f64, latent[1] as f64])?;
        Ok(x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Per-pixel mean squared error of compress-then-decompress.
    pub fn reconstruction_mse(&self, images: &LabeledImageSet) -> Result<f64> {
        let mut total = 0.0;
        for row in images.images().axis_iter(Axis(0)) {
            let x = row.to_vec();
            let xh = self.decompress(self.compress(&x)?)?;
            total += mse(&x, &xh);
        }
        Ok(total / images.len() as f64)
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

#[derive(Clone, Debug)]
pub struct Classifier {
    net: Mlp,
}

impl Classifier {
    pub fn new(input_dim: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend(hidden);
        widths.push(classes);
        Ok(Classifier {
            net: Mlp::chain(&widths, Activation::Softmax, false)?,
        })
    }

    pub fn init(&mut self, seed: u64) {
        self.net.init(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        self.net.set_params(p)
    }

    pub fn train(&mut self, images: &LabeledImageSet, cfg: &FitConfig) -> Result<Vec<f64>> {
        let mut params = self.net.params().to_vec();
        let mut net = self.net.clone();
        let side = (images.pixel_dim() as f64).sqrt() as usize;
        let history = fit(net.n_params(), &mut params, images, cfg, |p, idx, grad, rng| {
            net.set_params(p)?;
            let mut x = images.batch(idx);
            if cfg.max_shift > 0 && side * side == images.pixel_dim() {
                for mut row in x.rows_mut() {
                    let s = cfg.max_shift as i64;
                    let (dr, dc) = (rng.random_range(-s..=s) as isize, rng.random_range(-s..=s) as isize);
                    let shifted = translate(row.as_slice().expect("owned batch rows are contiguous"), side, dr, dc);
                    row.assign(&ndarray::ArrayView1::from(&shifted[..]));
                }
            }
            let labels: Vec<usize> = idx.iter().map(|&i| images.labels()[i] as usize).collect();
            let (probs, cache) = net.forward(x.view())?;
            let (loss, up, _) = cross_entropy_batch(&labels, probs.view())?;
            net.backward_into(&cache, up.view(), grad)?;
            Ok(loss)
        })?;
        self.net.set_params(&params)?;
        Ok(history)
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let (probs, _) = self.net.forward(x)?;
        Ok(probs.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
    }

    pub fn predict(&self, image: &[f64]) -> Result<usize> {
        let x = Array2::from_shape_vec((1, image.len()), image.to_vec()).map_err(|e| Error::dim(e.to_string()))?;
        Ok(self.predict_batch(x.view())?[0])
    }

    pub fn accuracy(&self, images: &LabeledImageSet) -> Result<f64> {
        let pred = self.predict_batch(images.images())?;
        let hits = pred.iter().zip(images.labels()).filter(|(p, &l)| **p == l as usize).count();
        Ok(hits as f64 / images.len().max(1) as f64)
    }
}

/// Moves a square image by `(dr, dc)` pixels, filling with zeros.
fn translate(img: &[f64], side: usize, dr: isize, dc: isize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for r in 0..side as isize {
        for c in 0..side as isize {
            let (sr, sc) = (r - dr, c - dc);
            if (0..side as isize).contains(&sr) && (0..side as isize).contains(&sc) {
                out[(r as usize) * side + c as usize] = img[(sr as usize) * side + sc as usize];
            }
        }
    }
    out
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc })
        .0
}
