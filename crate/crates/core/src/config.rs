//! Run configuration: a flat TOML file embedding every model default so an
//! experiment is fully reproducible from its emitted snapshot.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::battery::BatteryParams;
use crate::model::VehicleModel;
use crate::mpc::MpcConfig;
use crate::powertrain::MotorSpec;
use crate::scenario::CorridorConfig;
use crate::vehicle::VehicleParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Optimal,
    Baseline,
    /// Optimal run plus the fixed-ratio re-split ablation of its torque log.
    Ablation,
}

impl std::str::FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(Self::Optimal),
            "baseline" => Ok(Self::Baseline),
            "ablation" => Ok(Self::Ablation),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (optimal|baseline|ablation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub scenario: Option<PathBuf>,
    pub signals: Option<PathBuf>,
    pub grade: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Complete experiment description; every field has a default, so an empty
/// file is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: RunMode,
    pub paths: PathsConfig,
    pub vehicle: VehicleParams,
    pub battery: BatteryParams,
    pub front_motor: MotorSpec,
    pub rear_motor: MotorSpec,
    pub mpc: MpcConfig,
    pub corridor: CorridorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Optimal,
            paths: PathsConfig::default(),
            vehicle: VehicleParams::default(),
            battery: BatteryParams::default(),
            front_motor: MotorSpec::default_im(),
            rear_motor: MotorSpec::default_pmsm(),
            mpc: MpcConfig::default(),
            corridor: CorridorConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&raw)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize: {e}")))?;
        crate::config::write_atomic(path, body.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.battery.validate()?;
        self.front_motor.validate()?;
        self.rear_motor.validate()?;
        self.mpc.validate()?;
        Ok(())
    }

    /// Builds the full plant model (generates maps, fits polynomials).
    pub fn build_model(&self) -> Result<Arc<VehicleModel>> {
        VehicleModel::from_parts(
            self.vehicle.clone(),
            self.battery.clone(),
            self.front_motor.clone(),
            self.rear_motor.clone(),
        )
    }
}

/// Writes through a temporary file and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
