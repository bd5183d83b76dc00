//! Two-input network: a primary input, optionally normalised, concatenated
//! with a projection of a side input, followed by a dense trunk.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{layer_norm, layer_norm_backward, Activation, LayerSpec, Mlp, MlpCache};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub primary: usize,
    pub norm_primary: bool,
    /// Side input width and its ReLU projection width. The side input is
    /// always layer-normalised.
    pub side: Option<(usize, usize)>,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub output: Activation,
}

#[derive(Clone, Debug)]
pub struct BranchNet {
    spec: BranchSpec,
    side: Option<Mlp>,
    trunk: Mlp,
}

#[derive(Clone, Debug)]
pub struct BranchCache {
    primary_norm: Option<(Array2<f64>, ndarray::Array1<f64>)>,
    side: Option<MlpCache>,
    trunk: MlpCache,
}

impl BranchNet {
    pub fn new(spec: BranchSpec) -> Result<Self> {
        let side = match spec.side {
            Some((w, p)) => Some(Mlp::new(vec![LayerSpec {
                inputs: w,
                outputs: p,
                activation: Activation::Relu,
                pre_norm: true,
            }])?),
            None => None,
        };
        let mut widths = vec![spec.primary + spec.side.map_or(0, |s| s.1)];
        widths.extend(&spec.hidden);
        widths.push(spec.outputs);
        let trunk = Mlp::chain(&widths, spec.output, false)?;
        Ok(BranchNet { spec, side, trunk })
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let Some(s) = &mut self.side {
            s.init(rng);
        }
        self.trunk.init(rng);
    }

    pub fn spec(&self) -> &BranchSpec {
        &self.spec
    }

    fn side_len(&self) -> usize {
        self.side.as_ref().map_or(0, Mlp::n_params)
    }

    pub fn n_params(&self) -> usize {
        self.side_len() + self.trunk.n_params()
    }

    /// Side-branch parameters followed by trunk parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        if let Some(s) = &self.side {
            p.extend_from_slice(s.params());
        }
        p.extend_from_slice(self.trunk.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::dim(format!(
                "{} parameters for a branch network with {}",
                p.len(),
                self.n_params()
            )));
        }
        let k = self.side_len();
        if let Some(s) = &mut self.side {
            s.set_params(&p[..k])?;
        }
        self.trunk.set_params(&p[k..])
    }

    pub fn forward(&self, primary: ArrayView2<f64>, side: Option<ArrayView2<f64>>) -> Result<(Array2<f64>, BranchCache)> {
        if primary.ncols() != self.spec.primary {
            return Err(Error::dim(format!(
                "primary input width {} for a network expecting {}",
                primary.ncols(),
                self.spec.primary
            )));
        }
        let (p, primary_norm) = if self.spec.norm_primary {
            let (y, s) = layer_norm(primary);
            (y.clone(), Some((y, s)))
        } else {
            (primary.to_owned(), None)
        };
        let (joined, side_cache) = match (&self.side, side) {
            (Some(net), Some(x)) => {
                if x.nrows() != primary.nrows() {
                    return Err(Error::dim("side and primary batches differ in size"));
                }
                let (proj, c) = net.forward(x)?;
                (concatenate![Axis(1), p, proj], Some(c))
            }
            (None, None) => (p, None),
            (Some(_), None) => return Err(Error::Contract("side input required".into())),
            (None, Some(_)) => return Err(Error::Contract("network takes no side input".into())),
        };
        let (out, trunk) = self.trunk.forward(joined.view())?;
        Ok((
            out,
            BranchCache {
                primary_norm,
                side: side_cache,
                trunk,
            },
        ))
    }

    /// Accumulates the parameter gradient into `grad` and returns the
    /// gradient with respect to the primary input.
    pub fn backward_into(&self, cache: &BranchCache, upstream: ArrayView2<f64>, grad: &mut [f64]) -> Result<Array2<f64>> {
        if grad.len() != self.n_params() {
            return Err(Error::dim("gradient buffer has the wrong length"));
        }
        let k = self.side_len();
        let (gs, gt) = grad.split_at_mut(k);
        let dj = self.trunk.backward_into(&cache.trunk, upstream, gt)?;
        let np = self.spec.primary;
        if let (Some(net), Some(c)) = (&self.side, &cache.side) {
            let dproj = dj.slice(s![.., np..]).to_owned();
            net.backward_into(c, dproj.view(), gs)?;
        }
        let dp = dj.slice(s![.., ..np]).to_owned();
        Ok(match &cache.primary_norm {
            Some((y, inv)) => layer_norm_backward(y, inv, dp),
            None => dp,
        })
    }
}
