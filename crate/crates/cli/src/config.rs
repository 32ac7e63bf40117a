use std::path::Path;

use anyhow::{Context, Result};
use lanechange_core::calibration::synth::SynthConfig;
use lanechange_core::calibration::FitConfig;
use lanechange_core::classifier::TrainConfig;
use lanechange_core::planner::PlannerConfig;
use lanechange_core::sim::ScenarioGenConfig;
use serde::{Deserialize, Serialize};

use crate::{Command, UsageError};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Everything tunable about a run. Sections left out of a config file keep
/// their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub scenario: ScenarioGenConfig,
    pub planner: PlannerConfig,
    pub fit: FitConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.planner.validate()?;
        anyhow::ensure!(self.fit.n_starts >= 1, "fit.n_starts must be at least 1");
        anyhow::ensure!(self.fit.sigma > 0.0, "fit.sigma must be positive");
        Ok(())
    }
}

/// Written into every output directory. Feeding it back through `rerun`
/// repeats the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub command: Command,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: Command, seed: u64, config: RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            command,
            config,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_input(path)?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: not a manifest: {e}", path.display())).into())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).context("serializing manifest")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Reads a config file. A manifest is accepted and contributes its config.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = read_input(path)?;
    let usage = |e: toml::de::Error| UsageError(format!("{}: {e}", path.display()));
    let table: toml::Table = toml::from_str(&text).map_err(usage)?;
    let cfg = if table.contains_key("command") {
        toml::from_str::<Manifest>(&text).map_err(usage)?.config
    } else {
        toml::from_str::<RunConfig>(&text).map_err(usage)?
    };
    cfg.validate()
        .map_err(|e| UsageError(format!("{}: {e:#}", path.display())))?;
    Ok(cfg)
}

pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("no such file: {}", path.display())).into())
    }
}

fn read_input(path: &Path) -> Result<String> {
    require_file(path)?;
    std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}
