use ndarray::s;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MinnModel;
use crate::channel::{ChannelRealization, ChannelSet};
use crate::datasets::LabeledImageSet;
use crate::error::{Error, Result};
use crate::neuralnet::{adam_step, AdamConfig, AdamState};
use crate::units::{dbm_to_watts, watts_to_dbm};

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Images and channel pools for training and testing.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a LabeledImageSet,
    pub test: &'a LabeledImageSet,
    pub train_channels: &'a ChannelSet,
    pub test_channels: &'a ChannelSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub power_dbm: f64,
    pub train_loss: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub history: Vec<EpochMetrics>,
}

impl TrainRun {
    pub fn final_accuracy(&self) -> f64 {
        self.history.last().map_or(0.0, |m| m.test_acc)
    }

    pub fn best_accuracy(&self) -> f64 {
        self.history.iter().map(|m| m.test_acc).fold(0.0, f64::max)
    }
}

/// Optimiser state carried across epochs, so that training can continue
/// after the transmit power changes.
pub struct Trainer {
    pub model: MinnModel,
    config: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: MinnModel, config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let adam = AdamState::new(model.n_params(), config.optimizer).with_decay_limit(model.phase_offset());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer { model, config, adam, rng, epoch: 0 })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over the training images; each sample meets a channel
    /// drawn at random from the training pool. Returns the mean loss.
    pub fn train_epoch(&mut self, images: &LabeledImageSet, channels: &ChannelSet) -> Result<f64> {
        if images.is_empty() || channels.is_empty() {
            return Err(Error::Config("training needs images and channels".into()));
        }
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut self.rng);
        let mut params = self.model.params();
        let mut total = 0.0;
        for idx in order.chunks(self.config.batch_size) {
            let x = images.batch(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| images.labels()[i] as usize).collect();
            let chans: Vec<&ChannelRealization> = idx
                .iter()
                .map(|_| channels.get(self.rng.random_range(0..channels.len())))
                .collect();
            let (loss, grad) = self.model.loss_and_grad(x.view(), &labels, &chans, &mut self.rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss became {loss} in epoch {}", self.epoch + 1)));
            }
            total += loss * idx.len() as f64;
            adam_step(&mut self.adam, &mut params, &grad)?;
            self.model.set_params(&params)?;
        }
        self.epoch += 1;
        Ok(total / images.len() as f64)
    }

    /// Trains one epoch and evaluates on the test split.
    pub fn step(&mut self, data: &TrainData<'_>) -> Result<EpochMetrics> {
        let train_loss = self.train_epoch(data.train, data.train_channels)?;
        let eval_seed = self.config.seed ^ (self.epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let test_acc = evaluate(&self.model, data.test, data.test_channels, eval_seed)?;
        Ok(EpochMetrics {
            epoch: self.epoch,
            power_dbm: watts_to_dbm(self.model.power()),
            train_loss,
            test_acc,
        })
    }

    /// Runs the configured number of epochs at the model's current power.
    pub fn run(&mut self, data: &TrainData<'_>) -> Result<TrainRun> {
        let mut history = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            history.push(self.step(data)?);
        }
        Ok(TrainRun { history })
    }

    /// Trains under a decreasing power schedule.
    pub fn run_annealed(&mut self, data: &TrainData<'_>, schedule: &AnnealSchedule) -> Result<TrainRun> {
        schedule.validate()?;
        let mut history = Vec::new();
        for e in 0..schedule.total_epochs() {
            self.model.set_power(dbm_to_watts(schedule.power_dbm(e)));
            history.push(self.step(data)?);
        }
        Ok(TrainRun { history })
    }
}

/// Classification accuracy with every test image paired with a random test
/// channel and fresh noise, both drawn from `seed`.
pub fn evaluate(model: &MinnModel, images: &LabeledImageSet, channels: &ChannelSet, seed: u64) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Config("no images to evaluate".into()));
    }
    if channels.is_empty() {
        return Err(Error::Config("no channels to evaluate with".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    let all = images.images();
    for start in (0..images.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(images.len());
        let chans: Vec<&ChannelRealization> = (start..end)
            .map(|_| channels.get(rng.random_range(0..channels.len())))
            .collect();
        let (probs, _) = model.forward(all.slice(s![start..end, ..]), &chans, &mut rng)?;
        for (row, &label) in probs.rows().into_iter().zip(&images.labels()[start..end]) {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc });
            correct += usize::from(best.0 == label as usize);
        }
    }
    Ok(correct as f64 / images.len() as f64)
}

/// Stepwise decreasing transmit power: `pretrain_epochs` at `start_dbm`,
/// then one `step_db` drop every `epochs_per_step` epochs until `floor_dbm`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub start_dbm: f64,
    pub floor_dbm: f64,
    pub step_db: f64,
    pub epochs_per_step: usize,
    pub pretrain_epochs: usize,
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_db > 0.0) || self.epochs_per_step == 0 || self.floor_dbm > self.start_dbm {
            return Err(Error::Config(
                "annealing needs a positive step, positive epochs per step and floor ≤ start".into(),
            ));
        }
        Ok(())
    }

    /// Power for zero-based epoch `epoch`.
    pub fn power_dbm(&self, epoch: usize) -> f64 {
        if epoch < self.pretrain_epochs {
            return self.start_dbm;
        }
        let drops = ((epoch - self.pretrain_epochs) / self.epochs_per_step) as f64;
        (self.start_dbm - self.step_db * drops).max(self.floor_dbm)
    }

    /// Number of power levels from start to floor inclusive.
    pub fn levels(&self) -> usize {
        ((self.start_dbm - self.floor_dbm) / self.step_db + 1e-9).floor() as usize + 1
    }

    /// Pretraining plus every level held for `epochs_per_step` epochs.
    pub fn total_epochs(&self) -> usize {
        self.pretrain_epochs + self.levels() * self.epochs_per_step
    }
}
