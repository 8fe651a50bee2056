//! TOML configuration files for each subcommand. Relative paths resolve
//! against the directory of the file that names them.

use std::fs;
use std::path::{Path, PathBuf};

use fusesdm::estimation::FitSettings;
use fusesdm::experiment::StudyConfig;
use fusesdm::geometry::{Point, Rect, StudyRegion};
use fusesdm::likelihoods::{QuadratureSettings, Scenario};
use fusesdm::par::Execution;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Written back into every manifest; ignored when a manifest is re-read.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub command: String,
    pub status: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed: Option<usize>,
}

impl RunInfo {
    pub fn new(command: &str, status: &str) -> Self {
        RunInfo {
            command: command.into(),
            status: status.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            completed: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub study: StudyConfig,
    /// Replicate index whose seed stream is used.
    #[serde(default)]
    pub replicate: usize,
    /// `[xmin, ymin, xmax, ymax]`; the unit square when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<[f64; 4]>,
    /// Survey design file; the study's jittered lattice when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<PathBuf>,
    /// Covariate rasters; a simulated Gaussian field when absent. The
    /// abundance calibration only applies to simulated fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

fn default_scenarios() -> Vec<Scenario> {
    Scenario::PARTIAL.to_vec()
}

fn default_partitions() -> [usize; 2] {
    [10, 10]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub design: PathBuf,
    pub observations: PathBuf,
    pub covariates: Vec<PathBuf>,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_partitions")]
    pub partitions: [usize; 2],
    /// `[xmin, ymin, xmax, ymax]`; the raster extent when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<[f64; 4]>,
    #[serde(default)]
    pub quadrature: QuadratureSettings,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub execution: Execution,
    /// Worker threads (0 = all cores).
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// `fit.json` written by the fit command.
    pub fit: PathBuf,
    pub covariates: Vec<PathBuf>,
    /// Which fitted model to map; the first in the file when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

/// Reads and parses a config file, or returns `None` when no file was given.
pub fn load<T: DeserializeOwned>(path: Option<&Path>) -> Result<Option<(T, PathBuf)>, CliError> {
    let Some(path) = path else {
        return Ok(None);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Some((value, dir)))
}

/// Makes `path` absolute relative to `base` and checks that it exists.
pub fn resolve(path: &mut PathBuf, base: &Path) -> Result<(), CliError> {
    let joined = if path.is_absolute() { path.clone() } else { base.join(&*path) };
    *path = fs::canonicalize(&joined).map_err(|_| CliError::Config(format!("file not found: {}", joined.display())))?;
    Ok(())
}

pub fn region_of(bounds: [f64; 4]) -> Result<StudyRegion, CliError> {
    let [x0, y0, x1, y1] = bounds;
    let rect = Rect::new(Point::new(x0, y0), Point::new(x1, y1)).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(StudyRegion::rect(rect))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Failed(format!("cannot serialise manifest: {e}")))
}
