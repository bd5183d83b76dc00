//! Real-valued feed-forward networks with hand-written reverse mode.
//!
//! Parameters of a network live in one flat vector; each layer owns a
//! contiguous slice holding its weight matrix (row-major, `outputs × inputs`)
//! followed by its bias. Forward and backward run on row-major batches.

mod adam;
mod branch;
mod checkpoint;
mod loss;
mod pack;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use branch::{BranchCache, BranchNet, BranchSpec};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{cross_entropy, cross_entropy_batch, CrossEntropy, PROB_FLOOR};
pub use pack::{pack_complex, unpack_complex};

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to the variance inside layer normalisation. Received signals can sit
/// many orders of magnitude below one, so this is far below the usual 1e-5.
pub const LN_EPS: f64 = 1e-24;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Normalise the layer input (zero mean, unit variance, no affine).
    pub pre_norm: bool,
}

impl LayerSpec {
    pub fn n_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    generation: u64,
}

/// Activations saved by [`Mlp::forward`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    generation: u64,
    /// Input to each layer after optional normalisation.
    inputs: Vec<Array2<f64>>,
    /// Reciprocal standard deviation per row for normalised layers.
    inv_std: Vec<Option<Array1<f64>>>,
    /// Output of each layer after its activation.
    outputs: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("a network has at least one layer")
    }
}

impl Mlp {
    /// Zero-initialised network.
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::dim("a network needs at least one layer"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs != w[1].inputs {
                return Err(Error::dim(format!(
                    "layer {i} has {} outputs but layer {} takes {} inputs",
                    w[0].outputs,
                    i + 1,
                    w[1].inputs
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::dim(format!("layer {i} has a zero dimension")));
            }
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::Contract("softmax is only allowed on the last layer".into()));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.n_params();
        }
        Ok(Mlp {
            layers,
            offsets,
            params: vec![0.0; total],
            generation: next_generation(),
        })
    }

    /// Dense chain `widths[0] → … → widths[k]` with ReLU on hidden layers
    /// and `last` on the output layer.
    pub fn chain(widths: &[usize], last: Activation, norm_input: bool) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::dim("a chain needs input and output widths"));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| LayerSpec {
                inputs: widths[i],
                outputs: widths[i + 1],
                activation: if i + 1 == n { last } else { Activation::Relu },
                pre_norm: norm_input && i == 0,
            })
            .collect();
        Mlp::new(layers)
    }

    /// He-uniform weights for ReLU layers, Glorot-uniform otherwise, zero biases.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (l, &off) in self.layers.iter().zip(&self.offsets) {
            let bound = match l.activation {
                Activation::Relu => (6.0 / l.inputs as f64).sqrt(),
                _ => (6.0 / (l.inputs + l.outputs) as f64).sqrt(),
            };
            let nw = l.inputs * l.outputs;
            for w in &mut self.params[off..off + nw] {
                *w = rng.random_range(-bound..bound);
            }
            for b in &mut self.params[off + nw..off + l.n_params()] {
                *b = 0.0;
            }
        }
        self.generation = next_generation();
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::dim(format!(
                "{} parameters given for a network with {}",
                p.len(),
                self.params.len()
            )));
        }
        self.params_mut().copy_from_slice(p);
        Ok(())
    }

    fn weights(&self, i: usize) -> ArrayView2<'_, f64> {
        let l = &self.layers[i];
        let off = self.offsets[i];
        ArrayView2::from_shape((l.outputs, l.inputs), &self.params[off..off + l.inputs * l.outputs])
            .expect("layer slice matches its shape")
    }

    fn bias(&self, i: usize) -> &[f64] {
        let l = &self.layers[i];
        let off = self.offsets[i] + l.inputs * l.outputs;
        &self.params[off..off + l.outputs]
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "input width {} for a network expecting {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut inv_std = Vec::with_capacity(n);
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(n);
        for (i, l) in self.layers.iter().enumerate() {
            let raw = if i == 0 { x } else { outputs[i - 1].view() };
            let (xin, s) = if l.pre_norm {
                let (y, s) = layer_norm(raw);
                (y, Some(s))
            } else {
                (raw.to_owned(), None)
            };
            let mut z = xin.dot(&self.weights(i).t());
            let b = ndarray::ArrayView1::from(self.bias(i));
            z += &b;
            activate(&mut z, l.activation);
            inputs.push(xin);
            inv_std.push(s);
            outputs.push(z);
        }
        let out = outputs[n - 1].clone();
        Ok((
            out,
            MlpCache {
                generation: self.generation,
                inputs,
                inv_std,
                outputs,
            },
        ))
    }

    /// Forward pass on a single sample.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward(view)?.0.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. `upstream` is `∂J/∂output` per sample. Returns the
    /// parameter gradient (summed over the batch) and `∂J/∂input`.
    pub fn backward(&self, cache: &MlpCache, upstream: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let dx = self.backward_into(cache, upstream, &mut grad)?;
        Ok((grad, dx))
    }

    /// As [`Mlp::backward`], accumulating the parameter gradient into `grad`.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        upstream: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<Array2<f64>> {
        if cache.generation != self.generation {
            return Err(Error::Contract("network cache is stale".into()));
        }
        if grad.len() != self.params.len() {
            return Err(Error::dim("gradient buffer has the wrong length"));
        }
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(Error::dim(format!(
                "upstream gradient {:?} for output {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        let mut g = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            activation_backward(&mut g, &cache.outputs[i], l.activation);
            let off = self.offsets[i];
            let nw = l.inputs * l.outputs;
            let dw = g.t().dot(&cache.inputs[i]);
            for (acc, v) in grad[off..off + nw].iter_mut().zip(dw.iter()) {
                *acc += v;
            }
            let db = g.sum_axis(Axis(0));
            for (acc, v) in grad[off + nw..off + nw + l.outputs].iter_mut().zip(db.iter()) {
                *acc += v;
            }
            let mut dx = g.dot(&self.weights(i));
            if let Some(s) = &cache.inv_std[i] {
                dx = layer_norm_backward(&cache.inputs[i], s, dx);
            }
            g = dx;
        }
        Ok(g)
    }
}

fn activate(z: &mut Array2<f64>, act: Activation) {
    match act {
        Activation::Linear => {}
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Softmax => {
            for mut row in z.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row /= s;
            }
        }
    }
}

fn activation_backward(g: &mut Array2<f64>, out: &Array2<f64>, act: Activation) {
    match act {
        Activation::Linear => {}
        Activation::Relu => ndarray::Zip::from(g).and(out).for_each(|g, &o| {
            if o <= 0.0 {
                *g = 0.0;
            }
        }),
        Activation::Softmax => {
            for (mut gr, orow) in g.rows_mut().into_iter().zip(out.rows()) {
                let dot: f64 = gr.iter().zip(orow.iter()).map(|(a, b)| a * b).sum();
                ndarray::Zip::from(&mut gr).and(&orow).for_each(|g, &p| *g = p * (*g - dot));
            }
        }
    }
}

/// Row-wise normalisation to zero mean and unit variance. Returns the
/// normalised rows and each row's reciprocal standard deviation.
pub fn layer_norm(x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut y = x.to_owned();
    let mut inv = Array1::zeros(x.nrows());
    for (mut row, s) in y.rows_mut().into_iter().zip(inv.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        row *= *s;
    }
    (y, inv)
}

/// Gradient through [`layer_norm`] given its output `y`.
pub fn layer_norm_backward(y: &Array2<f64>, inv_std: &Array1<f64>, mut g: Array2<f64>) -> Array2<f64> {
    let d = y.ncols() as f64;
    for ((mut gr, yr), &s) in g.rows_mut().into_iter().zip(y.rows()).zip(inv_std.iter()) {
        let mean_g = gr.sum() / d;
        let mean_gy = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        ndarray::Zip::from(&mut gr)
            .and(&yr)
            .for_each(|g, &yv| *g = s * (*g - mean_g - yv * mean_gy));
    }
    g
}
