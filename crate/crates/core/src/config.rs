//! One TOML config file covers the vehicle, the uncertainty model, the
//! certification envelope, the metric-search settings, the OCP weights and
//! the reference track; scenarios live in their own files of the same format.

use crate::contraction::synthesis::SynthesisConfig;
use crate::contraction::EnvelopeSpec;
use crate::mpc::OcpConfig;
use crate::sim::ScenarioConfig;
use crate::track::{generate_synthetic_track, TrackGenSpec, TrackPath};
use crate::uncertainty::UncertaintySpec;
use crate::vehicle::VehicleParams;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    Parse(PathBuf, toml::de::Error),
    Invalid(String),
    Track(crate::track::TrackError),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(p, e) => write!(f, "reading {}: {e}", p.display()),
            Self::Parse(p, e) => write!(f, "parsing {}: {e}", p.display()),
            Self::Invalid(s) => write!(f, "invalid config: {s}"),
            Self::Track(e) => write!(f, "track: {e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<crate::track::TrackError> for ConfigError {
    fn from(e: crate::track::TrackError) -> Self {
        Self::Track(e)
    }
}

/// Track source: inline segment list or a CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackConfig {
    Generated(TrackGenSpec),
    Csv { csv: PathBuf, closed: bool },
}

impl TrackConfig {
    /// Build the track, resolving CSV paths relative to `base`.
    pub fn build(&self, base: &Path) -> Result<TrackPath, ConfigError> {
        match self {
            Self::Generated(spec) => Ok(generate_synthetic_track(spec)?),
            Self::Csv { csv, closed } => {
                let path = if csv.is_absolute() {
                    csv.clone()
                } else {
                    base.join(csv)
                };
                Ok(TrackPath::from_csv(&path, *closed)?)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppConfig {
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub uncertainty: UncertaintySpec,
    #[serde(default)]
    pub envelope: EnvelopeSpec,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub ocp: OcpConfig,
    pub track: TrackConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.vehicle.validate().map_err(ConfigError::Invalid)?;
        self.ocp.validate().map_err(ConfigError::Invalid)?;
        if self.envelope.v_x[0] < self.vehicle.v_x_floor {
            return Err(ConfigError::Invalid(format!(
                "envelope v_x lower bound {} below the model floor {}",
                self.envelope.v_x[0], self.vehicle.v_x_floor
            )));
        }
        Ok(())
    }

    /// Octagon rows as (m_r, C_r) pairs for the constants derivation.
    pub fn octagon_pairs(&self) -> Vec<(f64, f64)> {
        self.ocp.octagon.iter().map(|r| (r.m, r.c)).collect()
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    let sc: ScenarioConfig =
        toml::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e))?;
    sc.validate().map_err(ConfigError::Invalid)?;
    Ok(sc)
}
