//! TOML configuration shared by the command-line subcommands.
//!
//! ```toml
//! chains = 4
//!
//! [prior]
//! lambda = 10.0
//! cbar = 1
//!
//! [chain]
//! iterations = 20000
//! mode = "forest-shared-s"
//! initial_trees = 10
//!
//! [experiment]
//! scenario = "concentration-r1"
//! n_grid = [100, 250, 500, 1000]
//! ```
//!
//! Every table is optional and every key falls back to its default; unknown
//! keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentPlan;
use crate::inference::ChainConfig;
use crate::priors::PriorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub prior: PriorConfig,
    pub chain: ChainConfig,
    /// Number of chains run by `sample`.
    pub chains: usize,
    /// Plan for `experiment`; the scenario defaults apply when absent.
    pub experiment: Option<ExperimentPlan>,
}

impl Default for Config {
    fn default() -> Self {
        Self { prior: PriorConfig::default(), chain: ChainConfig::default(), chains: 4, experiment: None }
    }
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        self.prior.validate(None)?;
        self.chain.validate()?;
        if let Some(plan) = &self.experiment {
            plan.validate()?;
        }
        Ok(())
    }
}
