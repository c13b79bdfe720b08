//! Config loading (TOML or JSON by extension) and the single-trial config.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use risknav::mppi::MppiConfig;
use risknav::objective::{ObjectiveConfig, RiskConfig};
use risknav::sim::{Arm, BenchmarkSuite, DetectorTraining, EnvironmentSpec};
use risknav::SCHEMA_VERSION;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Raw bytes plus parsed value, so manifests can hash exactly what was read.
pub struct Loaded<T> {
    pub value: T,
    pub bytes: Vec<u8>,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let value = if is_json {
        serde_json::from_str(text).map_err(|e| anyhow!("{}: {e}", path.display()))?
    } else {
        toml::from_str(text).map_err(|e| anyhow!("{}: {e}", path.display()))?
    };
    Ok(Loaded { value, bytes })
}

/// One trial: an arena, one arm, and the indices that select its seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    #[serde(default = "schema_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub environment: Option<EnvironmentSpec>,
    #[serde(default = "default_arm")]
    pub arm: Arm,
    #[serde(default)]
    pub mppi: MppiConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorTraining>,
    #[serde(default)]
    pub map_index: usize,
    #[serde(default)]
    pub realization_index: usize,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_arm() -> Arm {
    Arm::new("cvar-dyn", RiskConfig::default())
}

impl TrialConfig {
    pub fn environment(&self) -> Result<&EnvironmentSpec> {
        self.environment
            .as_ref()
            .ok_or_else(|| anyhow!("environment.goal: a goal position is required ([environment] section missing)"))
    }

    /// The equivalent one-arm suite; seeds match the suite's trial at
    /// `(density, map_index, realization_index)`.
    pub fn to_suite(&self) -> Result<BenchmarkSuite> {
        let environment = self.environment()?.clone();
        let suite = BenchmarkSuite {
            version: self.version,
            densities: vec![environment.vegetation_density],
            environment,
            maps: self.map_index + 1,
            realizations: self.realization_index + 1,
            arms: vec![self.arm.clone()],
            mppi: self.mppi,
            objective: self.objective,
            seed: self.seed,
            detector: self.detector,
        };
        suite.validate()?;
        Ok(suite)
    }
}
