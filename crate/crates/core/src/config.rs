//! Driver configuration files. A file selects either the process-backed
//! driver or the in-process testbed through its `driver` field.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::{CommandDriver, Driver, DriverConfig, DriverError};
use crate::testbed::scenario::{named_scenario, ScenarioError, SeededBug};
use crate::testbed::TestbedDriver;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("testbed config must name exactly one of `scenario` or `named`")]
    AmbiguousScenario,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Driver(#[from] DriverError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedConfig {
    /// Path to a scenario JSON file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    /// Name of a built-in catalog scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub named: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "driver", rename_all = "snake_case")]
pub enum ConfigFile {
    Command(DriverConfig),
    Testbed(TestbedConfig),
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let bytes = fs::read(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_slice(&bytes).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
}

pub fn load_scenario(path: &Path) -> Result<SeededBug, ConfigError> {
    read_json(path)
}

/// Loads a config file and builds its driver. Relative paths inside the
/// file are resolved against the file's directory.
pub fn load_driver(path: &Path) -> Result<Arc<dyn Driver>, ConfigError> {
    let base = path.parent().unwrap_or(Path::new("."));
    match read_json::<ConfigFile>(path)? {
        ConfigFile::Command(mut cfg) => {
            cfg.rebase(base);
            Ok(Arc::new(CommandDriver::new(cfg)?))
        }
        ConfigFile::Testbed(tb) => {
            let bug = match (tb.scenario, tb.named) {
                (Some(p), None) => load_scenario(&base.join(p))?,
                (None, Some(name)) => named_scenario(&name)?,
                _ => return Err(ConfigError::AmbiguousScenario),
            };
            Ok(Arc::new(TestbedDriver::new(bug)))
        }
    }
}
