//! The JSON configuration document: model, planner, scenario, noise and
//! benchmark sections, each optional and defaulted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchmarkSpec;
use crate::error::{Error, Result};
use crate::planner::{ModelConfig, PlannerConfig, Workspace};
use crate::sim::{hoop_scenario, random_transition_scenario, Disturbance, NoiseSpec, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Random,
    Hoop,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "hoop" => Ok(Self::Hoop),
            _ => Err(Error::InvalidParameter(format!("unknown scenario '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub agents: usize,
    pub seed: u64,
    /// Simulated time limit, s.
    pub duration: f64,
    /// Used by the random generator; the hoop brings its own.
    pub workspace: Workspace,
    pub disturbances: Vec<Disturbance>,
    pub push_speed: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Random,
            agents: 10,
            seed: 7,
            duration: 20.0,
            workspace: Workspace::default(),
            disturbances: Vec::new(),
            push_speed: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub planner: PlannerConfig,
    pub scenario: ScenarioConfig,
    pub noise: NoiseSpec,
    pub benchmark: BenchmarkSpec,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        let cfg: Config = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.model.discretize(self.planner.h)?;
        self.benchmark.validate()
    }

    /// Builds the scenario described by the `scenario` and `noise` sections.
    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        let s = &self.scenario;
        let mut spec = match s.kind {
            ScenarioKind::Random => random_transition_scenario(
                s.agents,
                s.workspace,
                &self.planner.ellipsoid,
                s.duration,
                s.seed,
            )?,
            ScenarioKind::Hoop => hoop_scenario(s.agents, s.duration, s.seed)?,
        };
        spec.noise = self.noise;
        spec.disturbances = s.disturbances.clone();
        spec.push_speed = s.push_speed;
        spec.validate(&self.planner.ellipsoid)?;
        Ok(spec)
    }
}
