//! End-to-end models: encoder → power normalisation → metasurface channel →
//! decoder, with an optional controller producing the surface phases.

mod gradcheck;
mod model;
mod train;

pub use gradcheck::{grad_check_suite, grad_check_variant, GradBlockReport, GRADCHECK_STEP, GRADCHECK_TOL};
pub use model::{power_normalize, power_normalize_backward, ArchConfig, GradFault, MinnCache, MinnModel};
pub use train::{
    evaluate, AnnealSchedule, EpochMetrics, TrainConfig, TrainData, TrainRun, Trainer,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MsKind {
    Ris,
    Sim,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MsMode {
    /// Phases produced per frame by a controller network from the CSI.
    Reconfigurable,
    /// Phases are trained parameters shared by every frame.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    Aware,
    Agnostic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub kind: MsKind,
    pub mode: MsMode,
    pub csi: CsiMode,
}

impl Variant {
    pub fn new(kind: MsKind, mode: MsMode, csi: CsiMode) -> Self {
        Variant { kind, mode, csi }
    }

    pub fn has_controller(&self) -> bool {
        self.kind != MsKind::None && self.mode == MsMode::Reconfigurable
    }

    pub fn has_fixed_phases(&self) -> bool {
        self.kind != MsKind::None && self.mode == MsMode::Fixed
    }

    pub fn csi_aware(&self) -> bool {
        self.csi == CsiMode::Aware
    }

    /// Every combination of surface kind, mode and CSI mode.
    pub fn all() -> Vec<Variant> {
        let mut v = Vec::new();
        for kind in [MsKind::Ris, MsKind::Sim, MsKind::None] {
            for mode in [MsMode::Fixed, MsMode::Reconfigurable] {
                for csi in [CsiMode::Aware, CsiMode::Agnostic] {
                    v.push(Variant { kind, mode, csi });
                }
            }
        }
        v
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MsKind::Ris => "ris",
            MsKind::Sim => "sim",
            MsKind::None => "none",
        };
        let mode = match self.mode {
            MsMode::Fixed => "fixed",
            MsMode::Reconfigurable => "reconfigurable",
        };
        let csi = match self.csi {
            CsiMode::Aware => "aware",
            CsiMode::Agnostic => "agnostic",
        };
        write!(f, "{kind}-{mode}-{csi}")
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let parts: Vec<&str> = s.split('-').collect();
        let bad = || Error::Config(format!("unknown variant '{s}' (expected e.g. sim-fixed-agnostic)"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let kind = match parts[0] {
            "ris" => MsKind::Ris,
            "sim" => MsKind::Sim,
            "none" => MsKind::None,
            _ => return Err(bad()),
        };
        let mode = match parts[1] {
            "fixed" => MsMode::Fixed,
            "reconfigurable" => MsMode::Reconfigurable,
            _ => return Err(bad()),
        };
        let csi = match parts[2] {
            "aware" => CsiMode::Aware,
            "agnostic" => CsiMode::Agnostic,
            _ => return Err(bad()),
        };
        Ok(Variant { kind, mode, csi })
    }
}
