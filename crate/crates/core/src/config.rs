//! Versioned JSON description of a complete experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::{AlternatingConfig, FitConfig, PgaConfig};
use crate::channel::{FadingParams, NodeGeometry, Plane, Point};
use crate::error::{Error, Result};
use crate::metasurface::{RisSpec, SimSpec, Surface};
use crate::minn::{AnnealSchedule, ArchConfig, CsiMode, MsKind, MsMode, Variant};
use crate::neuralnet::AdamConfig;
use crate::units::wavelength;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size settings: all of MNIST, 200 epochs, ten restarts.
    Paper,
    /// Reduced settings that finish within minutes on one core.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset '{s}' (expected paper or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub tx_pos: Point,
    pub rx_pos: Point,
    pub ms_pos: Point,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingConfig {
    pub kappa_direct_db: f64,
    pub kappa_tx_ms_db: f64,
    pub kappa_ms_rx_db: f64,
    /// Loss of the direct link, dB.
    pub direct_loss_db: f64,
    /// Combined loss of the two surface links, dB.
    pub cascaded_loss_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    /// Elements along one side of each (square) surface layer.
    pub side: usize,
    pub sim_layers: usize,
    /// Distance between stacked layers in wavelengths.
    pub layer_spacing_wavelengths: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory with the four MNIST IDX files. A relative path in a
    /// configuration file is taken relative to that file.
    pub mnist_dir: PathBuf,
    pub train_images: usize,
    pub test_images: usize,
    pub train_channels: usize,
    pub test_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub tx_antennas: usize,
    pub channel_draws: usize,
    pub images_per_draw: usize,
    pub autoencoder_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub autoencoder_fit: FitConfig,
    pub classifier_fit: FitConfig,
    pub alternating: AlternatingConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub restarts: usize,
    /// Worker threads for independent restarts and channel draws; 0 uses
    /// every available core. `MINN_THREADS` lowers the limit further.
    pub workers: usize,
    pub carrier_hz: f64,
    pub geometry: GeometryConfig,
    pub fading: FadingConfig,
    pub surface: SurfaceConfig,
    pub variants: Vec<Variant>,
    pub power_dbm: f64,
    pub noise_dbm: f64,
    pub data: DataConfig,
    pub arch: ArchConfig,
    pub training: TrainingConfig,
    pub anneal: AnnealSchedule,
    pub baseline: BaselineConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let agnostic = |kind| Variant::new(kind, MsMode::Fixed, CsiMode::Agnostic);
        let desk = ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 1,
            restarts: 3,
            workers: 0,
            carrier_hz: 28e9,
            geometry: GeometryConfig {
                tx_pos: [-2.0, 2.0, -0.5],
                rx_pos: [10.0, 16.0, 4.0],
                ms_pos: [0.0, 0.0, 0.0],
                tx_antennas: 6,
                rx_antennas: 32,
            },
            fading: FadingConfig {
                kappa_direct_db: 3.0,
                kappa_tx_ms_db: 13.0,
                kappa_ms_rx_db: 7.0,
                direct_loss_db: 41.5,
                cascaded_loss_db: 67.0,
            },
            surface: SurfaceConfig {
                side: 8,
                sim_layers: 3,
                layer_spacing_wavelengths: 5.0,
            },
            variants: vec![agnostic(MsKind::Sim), agnostic(MsKind::None)],
            power_dbm: 30.0,
            noise_dbm: -90.0,
            data: DataConfig {
                mnist_dir: PathBuf::from("data/mnist"),
                train_images: 8000,
                test_images: 2000,
                train_channels: 500,
                test_channels: 200,
            },
            arch: ArchConfig::default(),
            training: TrainingConfig {
                epochs: 40,
                batch_size: 64,
                optimizer: AdamConfig {
                    learning_rate: 1e-3,
                    ..AdamConfig::default()
                },
            },
            anneal: AnnealSchedule {
                start_dbm: 30.0,
                floor_dbm: -20.0,
                step_db: 5.0,
                epochs_per_step: 5,
                pretrain_epochs: 0,
            },
            baseline: BaselineConfig {
                tx_antennas: 4,
                channel_draws: 20,
                images_per_draw: 50,
                autoencoder_hidden: vec![256, 64],
                classifier_hidden: vec![256, 256],
                autoencoder_fit: FitConfig {
                    epochs: 20,
                    ..FitConfig::default()
                },
                classifier_fit: FitConfig {
                    epochs: 40,
                    max_shift: 1,
                    ..FitConfig::default()
                },
                alternating: AlternatingConfig {
                    max_iterations: 5,
                    tolerance: 1e-6,
                    pga: PgaConfig {
                        steps: 10,
                        ..PgaConfig::default()
                    },
                },
            },
        };
        match preset {
            Preset::Desk => desk,
            Preset::Paper => ExperimentConfig {
                restarts: 10,
                data: DataConfig {
                    train_images: 60_000,
                    test_images: 10_000,
                    train_channels: 5000,
                    test_channels: 1000,
                    ..desk.data
                },
                training: TrainingConfig {
                    epochs: 200,
                    batch_size: 64,
                    optimizer: AdamConfig::default(),
                },
                variants: vec![
                    agnostic(MsKind::Ris),
                    agnostic(MsKind::Sim),
                    agnostic(MsKind::None),
                ],
                baseline: BaselineConfig {
                    channel_draws: 1000,
                    images_per_draw: 10,
                    ..desk.baseline
                },
                ..desk
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if cfg.data.mnist_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.mnist_dir = dir.join(&cfg.data.mnist_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "configuration version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(self.carrier_hz > 0.0) {
            return bad("carrier frequency must be positive");
        }
        if self.geometry.tx_antennas == 0 || self.geometry.rx_antennas == 0 {
            return bad("antenna counts must be positive");
        }
        if self.surface.side == 0 || self.surface.sim_layers == 0 || !(self.surface.layer_spacing_wavelengths > 0.0) {
            return bad("surface side, layer count and spacing must be positive");
        }
        if self.variants.is_empty() {
            return bad("at least one variant is required");
        }
        if self.data.train_images == 0
            || self.data.test_images == 0
            || self.data.train_channels == 0
            || self.data.test_channels == 0
        {
            return bad("image and channel counts must be positive");
        }
        if self.training.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.training.optimizer.learning_rate >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        if !self.power_dbm.is_finite() || !self.noise_dbm.is_finite() {
            return bad("powers must be finite");
        }
        self.anneal.validate()?;
        if self.baseline.tx_antennas == 0 || self.baseline.channel_draws == 0 || self.baseline.images_per_draw == 0 {
            return bad("baseline antenna, draw and image counts must be positive");
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        wavelength(self.carrier_hz)
    }

    /// Surface used by variants of `kind`.
    pub fn surface(&self, kind: MsKind) -> Result<Surface> {
        Ok(match kind {
            MsKind::None => Surface::None,
            MsKind::Ris => Surface::Ris(RisSpec::new(self.surface.side * self.surface.side)?),
            MsKind::Sim => Surface::sim(self.sim_spec())?,
        })
    }

    fn sim_spec(&self) -> SimSpec {
        let lam = self.wavelength();
        SimSpec {
            spacing: self.surface.layer_spacing_wavelengths * lam,
            ..SimSpec::with_defaults(self.surface.sim_layers, self.surface.side, lam)
        }
    }

    /// Placement for channels of `kind`. A reflecting surface lies in the
    /// xz plane; a stack lies in the yz plane. Surface-free variants share
    /// the stack's channels, so both see the same direct links.
    pub fn node_geometry(&self, kind: MsKind, tx_antennas: usize) -> NodeGeometry {
        let lam = self.wavelength();
        let (plane, depth) = match kind {
            MsKind::Ris => (Plane::Xz, 0.0),
            MsKind::Sim | MsKind::None => (Plane::Yz, self.sim_spec().depth()),
        };
        NodeGeometry {
            tx_pos: self.geometry.tx_pos,
            rx_pos: self.geometry.rx_pos,
            ms_pos: self.geometry.ms_pos,
            rx_antennas: self.geometry.rx_antennas,
            ..NodeGeometry::standard(tx_antennas, plane, self.surface.side, lam / 2.0, depth)
        }
    }

    pub fn fading(&self, geom: &NodeGeometry) -> Result<FadingParams> {
        let f = &self.fading;
        FadingParams::calibrated(
            geom,
            self.wavelength(),
            [f.kappa_direct_db, f.kappa_tx_ms_db, f.kappa_ms_rx_db],
            f.direct_loss_db,
            f.cascaded_loss_db,
        )
    }
}

/// Child seed for a named stream of the experiment.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag, mixed with the base and index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes().chain(base.to_le_bytes()).chain(index.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
