//! Run configuration file. Every section and field is optional; missing
//! values take the library defaults and command-line flags override both.

use std::path::Path;

use goalcast::data::WindowConfig;
use goalcast::evaluator::EvalConfig;
use goalcast::goalnet::ModelConfig;
use goalcast::sim::{AmbiguityConfig, ScriptMix, SimConfig};
use goalcast::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Generate the branch-point benchmark instead of the general mix.
    pub benchmark: bool,
    pub flights: usize,
    pub mix: ScriptMix,
    pub ambiguity: AmbiguityConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { benchmark: false, flights: 96, mix: ScriptMix::default(), ambiguity: AmbiguityConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, seed: 0 }
    }
}

impl SplitConfig {
    pub fn fractions(&self) -> Result<(f64, f64)> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.train) || !ok(self.val) || self.train + self.val > 1.0 {
            return Err(CliError::invalid("split fractions must be in [0, 1] with train + val <= 1"));
        }
        Ok((self.train, self.val))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub scenario: ScenarioConfig,
    pub window: WindowConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Built-in defaults, overlaid by `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        Self::parse(&text).map_err(|e| CliError::invalid(format!("{}: {}", path.display(), e.msg)))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::invalid(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}
