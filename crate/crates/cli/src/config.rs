//! JSON run configuration. Command-line flags override file values.

use std::path::Path;

use busflux_core::aggregation::DateRange;
use busflux_core::cleaning::CleaningConfig;
use busflux_core::features::{CampusCalendar, SplitSpec};
use busflux_core::models::{ModelKind, TrainConfig};
use busflux_core::synth::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Shared by the scenario, the split and model training.
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub cleaning: CleaningConfig,
    pub calendar: CampusCalendar,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub models: Vec<ModelKind>,
    /// Range for zero-filled hourly counts; inferred from the data when absent.
    pub date_range: Option<DateRange>,
    /// Stops that get rows even without any kept segment.
    pub stops: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scenario: ScenarioConfig::default(),
            cleaning: CleaningConfig::default(),
            calendar: CampusCalendar::default(),
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            models: ModelKind::ALL.to_vec(),
            date_range: None,
            stops: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Core(busflux_core::Error::Format(format!("{}: {e}", path.display()))))
    }

    /// Copies the shared seed and cleaning settings into every section.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.scenario.seed = self.seed;
        self.split.seed = self.seed;
        self.train.seed = self.seed;
        self.scenario.cleaning = self.cleaning.clone();
        self.cleaning.validate()?;
        self.calendar.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
