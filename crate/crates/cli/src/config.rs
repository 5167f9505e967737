//! Run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use reefsurvey::acoustics::DetectorConfig;
use reefsurvey::analysis::AnalysisConfig;
use reefsurvey::mission::{Bounds, MissionConfig, SurveyConfig};
use reefsurvey::topics::TopicConfig;
use reefsurvey::tracking::{TargetConfig, TrackingConfig};
use reefsurvey::world::{GridWorld, WorldConfig};

use crate::CliError;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub inputs: Inputs,
    pub world: WorldConfig,
    pub survey: SurveyConfig,
    pub mission: MissionConfig,
    pub acoustics: DetectorConfig,
    pub topics: TopicConfig,
    pub analysis: AnalysisConfig,
    pub tracking: TrackingConfig,
    pub target: TargetConfig,
    pub track: TrackRun,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            inputs: Inputs::default(),
            world: WorldConfig::default(),
            survey: SurveyConfig::default(),
            mission: MissionConfig::default(),
            acoustics: DetectorConfig::default(),
            topics: TopicConfig::default(),
            analysis: AnalysisConfig::default(),
            tracking: TrackingConfig::default(),
            target: TargetConfig::default(),
            track: TrackRun::default(),
        }
    }
}

/// Files consumed by `survey`, `analyze` and `track`. Unset paths fall back
/// to the outputs of the previous stage inside the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    pub world: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackRun {
    pub duration_s: f64,
}

impl Default for TrackRun {
    fn default() -> Self {
        Self { duration_s: 300.0 }
    }
}

/// Keys that default to "unset" and therefore do not appear in the
/// serialized defaults.
const OPTIONAL_KEYS: &str = "\
# inputs.world = \"PATH\"              world file; default <out>/world.json
# inputs.log = \"PATH\"                mission log file or directory; default <out>
# survey.bounds = { x_min = 0.5, x_max = 19.5, y_min = 0.5, y_max = 19.5 }
#                                    default: world extent inset by half a cell
# survey.along_track_spacing_m = 5.0 default: leg end points only
# mission.ekf = { ... }              filter noise; default mirrors [mission.sensors]
# mission.waypoint_timeout_s = 120.0 default: scales with leg length
# tracking.initial_range_m = 3.0     default: standoff range for the body length
# target.start = [x, y, z]           default: world centre
# target.distractor = { offset_m = [0.2, 0.5, -0.1], body_length_m = 0.3,
#                       switch_rate_per_s = 0.02, mean_lock_s = 3.0 }
# target.shape = { shape = \"ellipsoid\", width_m = 0.4, height_m = 0.4 }
";

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Every key with its default value, for `--help`.
    pub fn documented_defaults() -> String {
        let body = Self::default().to_toml().unwrap_or_default();
        format!("Configuration keys and defaults (TOML):\n\n{body}\nOptional keys, unset by default:\n{OPTIONAL_KEYS}")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.world.validate().map_err(|e| cfg(&e))?;
        self.mission.validate().map_err(|e| cfg(&e))?;
        self.topics.validate().map_err(|e| cfg(&e))?;
        self.analysis.validate().map_err(|e| cfg(&e))?;
        self.tracking.validate().map_err(|e| cfg(&e))?;
        self.target.validate().map_err(|e| cfg(&e))?;
        let a = &self.acoustics;
        if a.window == 0 || a.hop == 0 || a.hop > a.window || !(a.band_hi_hz > a.band_lo_hz) {
            return Err(CliError::Config("acoustics needs window >= hop > 0 and band_hi_hz > band_lo_hz".into()));
        }
        if !(self.track.duration_s > 0.0 && self.track.duration_s.is_finite()) {
            return Err(CliError::Config(format!("track.duration_s must be positive, got {}", self.track.duration_s)));
        }
        Ok(())
    }

    pub fn world_path(&self) -> PathBuf {
        self.inputs.world.clone().unwrap_or_else(|| self.out.join(crate::commands::WORLD_FILE))
    }

    pub fn log_path(&self) -> PathBuf {
        self.inputs.log.clone().unwrap_or_else(|| self.out.clone())
    }

    pub fn survey_bounds(&self, world: &GridWorld) -> Bounds {
        let half = 0.5 * world.grid.cell_size;
        Bounds::new(half, world.width_m - half, half, world.height_m - half)
    }
}
