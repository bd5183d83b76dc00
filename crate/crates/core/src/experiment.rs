//! Experiment runners shared by the command-line front end and the
//! acceptance suite: data and channel preparation, multi-restart training,
//! power annealing, checkpoint evaluation and the conventional baseline.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baseline::{alternating_optimize, Autoencoder, BaselineSystem, Classifier, PskScheme};
use crate::channel::{generate_channel_set, ChannelSet};
use crate::config::{derive_seed, ExperimentConfig};
use crate::datasets::{load_mnist_dir, LabeledImageSet, IMAGE_PIXELS, N_CLASSES};
use crate::error::{Error, Result};
use crate::minn::{evaluate, EpochMetrics, MinnModel, MsKind, TrainConfig, TrainData, Trainer, Variant};
use crate::units::dbm_to_watts;

/// Train and test images after subsampling.
pub struct ImageData {
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
}

pub fn load_images(cfg: &ExperimentConfig) -> Result<ImageData> {
    let (train, test) = load_mnist_dir(&cfg.data.mnist_dir)?;
    Ok(ImageData {
        train: train.subsample(cfg.data.train_images, derive_seed(cfg.seed, "images/train", 0))?,
        test: test.subsample(cfg.data.test_images, derive_seed(cfg.seed, "images/test", 0))?,
    })
}

pub struct ChannelPools {
    pub train: ChannelSet,
    pub test: ChannelSet,
}

/// Surface-free variants use the stacked-surface placement, so they see the
/// same direct links as the stacked variants.
pub fn geometry_tag(kind: MsKind) -> &'static str {
    match kind {
        MsKind::Ris => "ris",
        MsKind::Sim | MsKind::None => "sim",
    }
}

pub fn channel_pools(cfg: &ExperimentConfig, kind: MsKind, tx_antennas: usize) -> Result<ChannelPools> {
    let geom = cfg.node_geometry(kind, tx_antennas);
    let params = cfg.fading(&geom)?;
    let tag = geometry_tag(kind);
    let seed = |split: &str| derive_seed(cfg.seed, &format!("channels/{tag}/{split}"), tx_antennas as u64);
    Ok(ChannelPools {
        train: generate_channel_set(cfg.data.train_channels, &geom, &params, seed("train"))?,
        test: generate_channel_set(cfg.data.test_channels, &geom, &params, seed("test"))?,
    })
}

/// Effective worker count: the configured limit (all cores if zero), capped
/// by `MINN_THREADS` when set.
pub fn worker_count(cfg: &ExperimentConfig) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut n = if cfg.workers == 0 { available } else { cfg.workers };
    if let Some(cap) = std::env::var("MINN_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        n = n.min(cap.max(1));
    }
    n.max(1)
}

/// Applies `f` to every item on up to `workers` threads and returns the
/// results in input order. The first error in input order wins.
pub fn parallel_map<T, U, F>(items: Vec<T>, workers: usize, f: F) -> Result<Vec<U>>
where
    T: Send,
    U: Send,
    F: Fn(T) -> Result<U> + Sync,
{
    let n = items.len();
    let queue = Mutex::new(items.into_iter().enumerate().collect::<VecDeque<_>>());
    let results: Mutex<Vec<Option<Result<U>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let job = queue.lock().expect("queue lock").pop_front();
                let Some((i, item)) = job else { break };
                let out = f(item);
                results.lock().expect("result lock")[i] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

pub fn build_model(cfg: &ExperimentConfig, variant: Variant) -> Result<MinnModel> {
    MinnModel::new(
        variant,
        cfg.surface(variant.kind)?,
        cfg.geometry.tx_antennas,
        cfg.geometry.rx_antennas,
        cfg.arch.clone(),
        dbm_to_watts(cfg.power_dbm),
        dbm_to_watts(cfg.noise_dbm),
    )
}

pub fn restart_seed(cfg: &ExperimentConfig, variant: Variant, restart: usize) -> u64 {
    derive_seed(cfg.seed, &variant.to_string(), restart as u64)
}

/// One training restart and the optimiser state needed to continue it.
pub struct RestartRun {
    pub variant: Variant,
    pub restart: usize,
    pub seed: u64,
    pub trainer: Trainer,
    pub history: Vec<EpochMetrics>,
}

impl RestartRun {
    pub fn final_accuracy(&self) -> f64 {
        self.history.last().map_or(0.0, |m| m.test_acc)
    }
}

/// Trains `cfg.restarts` independently seeded models of one variant.
pub fn train_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    images: &ImageData,
    pools: &ChannelPools,
) -> Result<Vec<RestartRun>> {
    let data = TrainData {
        train: &images.train,
        test: &images.test,
        train_channels: &pools.train,
        test_channels: &pools.test,
    };
    parallel_map((0..cfg.restarts).collect(), worker_count(cfg), |restart| {
        let seed = restart_seed(cfg, variant, restart);
        let mut model = build_model(cfg, variant)?;
        model.init(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut trainer = Trainer::new(
            model,
            TrainConfig {
                epochs: cfg.training.epochs,
                batch_size: cfg.training.batch_size,
                optimizer: cfg.training.optimizer,
                seed: derive_seed(seed, "trainer", 0),
            },
        )?;
        let history = trainer.run(&data)?.history;
        Ok(RestartRun {
            variant,
            restart,
            seed,
            trainer,
            history,
        })
    })
}

/// Continues every run under the configured power staircase and returns
/// the metrics of the continuation only.
pub fn anneal_runs(
    cfg: &ExperimentConfig,
    runs: Vec<RestartRun>,
    images: &ImageData,
    pools: &ChannelPools,
) -> Result<Vec<(RestartRun, Vec<EpochMetrics>)>> {
    let data = TrainData {
        train: &images.train,
        test: &images.test,
        train_channels: &pools.train,
        test_channels: &pools.test,
    };
    parallel_map(runs, worker_count(cfg), |mut run| {
        let tail = run.trainer.run_annealed(&data, &cfg.anneal)?.history;
        Ok((run, tail))
    })
}

/// One row of a per-epoch metrics file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRow {
    pub variant: String,
    pub restart: usize,
    pub seed: u64,
    pub epoch: usize,
    pub power_dbm: f64,
    pub train_loss: f64,
    pub test_acc: f64,
}

pub fn epoch_rows(run: &RestartRun, history: &[EpochMetrics]) -> Vec<EpochRow> {
    history
        .iter()
        .map(|m| EpochRow {
            variant: run.variant.to_string(),
            restart: run.restart,
            seed: run.seed,
            epoch: m.epoch,
            power_dbm: m.power_dbm,
            train_loss: m.train_loss,
            test_acc: m.test_acc,
        })
        .collect()
}

/// Spread of final accuracies across restarts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracySummary {
    pub variant: String,
    pub restarts: usize,
    pub top: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl AccuracySummary {
    pub fn new(variant: impl Into<String>, accuracies: &[f64]) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::Domain("no accuracies to summarise".into()));
        }
        let mut sorted = accuracies.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(AccuracySummary {
            variant: variant.into(),
            restarts: sorted.len(),
            top: sorted[sorted.len() - 1],
            median: percentile(&sorted, 0.5),
            q1: percentile(&sorted, 0.25),
            q3: percentile(&sorted, 0.75),
        })
    }
}

/// Linear interpolation between closest ranks of ascending `sorted`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn checkpoint_name(variant: Variant, restart: usize) -> String {
    format!("{variant}-r{restart}.ckpt")
}

/// Accuracy of a saved model on the configured test split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub variant: String,
    pub restart: usize,
    pub power_dbm: f64,
    pub test_acc: f64,
}

/// Evaluates the checkpoints written by a training run in `dir`.
pub fn evaluate_checkpoints(cfg: &ExperimentConfig, dir: &Path, images: &ImageData) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        let pools = channel_pools(cfg, variant.kind, cfg.geometry.tx_antennas)?;
        let jobs: Vec<usize> = (0..cfg.restarts).collect();
        rows.extend(parallel_map(jobs, worker_count(cfg), |restart| {
            let mut model = MinnModel::load_checkpoint(&dir.join(checkpoint_name(variant, restart)))?;
            if model.variant() != variant {
                return Err(Error::Config(format!(
                    "checkpoint for restart {restart} holds {}, expected {variant}",
                    model.variant()
                )));
            }
            model.set_power(dbm_to_watts(cfg.power_dbm));
            model.set_noise(dbm_to_watts(cfg.noise_dbm));
            let seed = derive_seed(restart_seed(cfg, variant, restart), "eval", 0);
            Ok(EvalRow {
                variant: variant.to_string(),
                restart,
                power_dbm: cfg.power_dbm,
                test_acc: evaluate(&model, &images.test, &pools.test, seed)?,
            })
        })?);
    }
    Ok(rows)
}

/// Trains the autoencoder and the classifier of the conventional system.
pub fn train_baseline_system(cfg: &ExperimentConfig, images: &ImageData) -> Result<BaselineSystem> {
    let b = &cfg.baseline;
    let mut autoencoder = Autoencoder::new(IMAGE_PIXELS, &b.autoencoder_hidden)?;
    autoencoder.init(derive_seed(cfg.seed, "baseline/autoencoder", 0));
    autoencoder.train(&images.train, &b.autoencoder_fit)?;
    let mut classifier = Classifier::new(IMAGE_PIXELS, &b.classifier_hidden, N_CLASSES)?;
    classifier.init(derive_seed(cfg.seed, "baseline/classifier", 0));
    classifier.train(&images.train, &b.classifier_fit)?;
    Ok(BaselineSystem {
        autoencoder,
        classifier,
        scheme: PskScheme::select(b.tx_antennas, cfg.geometry.rx_antennas)?,
    })
}

/// Link and task metrics for one channel draw.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineRow {
    pub channel: usize,
    pub rate_bps_hz: f64,
    pub ser: f64,
    pub mse: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineSummary {
    pub power_dbm: f64,
    pub psk_order: u64,
    pub streams: usize,
    pub classifier_accuracy: f64,
    pub autoencoder_mse: f64,
    /// Classifier accuracy on compressed then rebuilt images, no link.
    pub codec_accuracy: f64,
    pub accuracy: f64,
    pub mean_rate_bps_hz: f64,
    pub mean_ser: f64,
    pub replaced_values: usize,
}

/// Sends test images over rate-optimised reflecting-surface links at
/// `power_dbm`, one link design per channel draw.
pub fn run_baseline(
    cfg: &ExperimentConfig,
    system: &BaselineSystem,
    images: &ImageData,
    power_dbm: f64,
) -> Result<(Vec<BaselineRow>, BaselineSummary)> {
    let b = &cfg.baseline;
    let geom = cfg.node_geometry(MsKind::Ris, b.tx_antennas);
    let params = cfg.fading(&geom)?;
    let draws = generate_channel_set(
        b.channel_draws,
        &geom,
        &params,
        derive_seed(cfg.seed, "channels/baseline", b.tx_antennas as u64),
    )?;
    let total = dbm_to_watts(power_dbm);
    let noise = dbm_to_watts(cfg.noise_dbm);
    let streams = system.scheme.symbols();
    let test = &images.test;
    let per_draw = parallel_map((0..draws.len()).collect(), worker_count(cfg), |k| {
        let h = draws.get(k);
        let design = alternating_optimize(h, total, noise, &b.alternating)?;
        let link = design.transceiver(h, streams, noise)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "baseline/noise", k as u64));
        let (mut errors, mut mse, mut correct, mut replaced) = (0usize, 0.0, 0usize, 0usize);
        for i in 0..b.images_per_draw {
            let idx = (k * b.images_per_draw + i) % test.len();
            let image = test.image(idx).to_vec();
            let out = system.run(&link, &image, noise, &mut rng)?;
            errors += out.symbol_errors;
            mse += out.reconstruction_mse;
            correct += usize::from(out.predicted == test.labels()[idx] as usize);
            replaced += out.replaced;
        }
        let n = b.images_per_draw as f64;
        let row = BaselineRow {
            channel: k,
            rate_bps_hz: design.rate,
            ser: errors as f64 / (n * streams as f64),
            mse: mse / n,
            accuracy: correct as f64 / n,
        };
        Ok((row, correct, replaced))
    })?;
    let mut codec_hits = 0usize;
    for (row, &label) in test.images().rows().into_iter().zip(test.labels()) {
        codec_hits += usize::from(system.clean_prediction(&row.to_vec())? == label as usize);
    }
    let draws_f = per_draw.len() as f64;
    let summary = BaselineSummary {
        power_dbm,
        psk_order: system.scheme.order(),
        streams,
        classifier_accuracy: system.classifier.accuracy(test)?,
        autoencoder_mse: system.autoencoder.reconstruction_mse(test)?,
        codec_accuracy: codec_hits as f64 / test.len() as f64,
        accuracy: per_draw.iter().map(|d| d.1).sum::<usize>() as f64 / (draws_f * b.images_per_draw as f64),
        mean_rate_bps_hz: per_draw.iter().map(|d| d.0.rate_bps_hz).sum::<f64>() / draws_f,
        mean_ser: per_draw.iter().map(|d| d.0.ser).sum::<f64>() / draws_f,
        replaced_values: per_draw.iter().map(|d| d.2).sum(),
    };
    Ok((per_draw.into_iter().map(|d| d.0).collect(), summary))
}

/// Writes serialisable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::format(path, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
