//! Scenario files and controller construction.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::empc::{EmpcWeights, ExactConfig, ExactEmpc, GrmModel, SigmoidConfig, SigmoidEmpc, DEFAULT_NODE_BUDGET};
use crate::error::{invalid, Error, Result};
use crate::grm::{Column, ColumnParams, ContinuousInput, StepConfig};
use crate::plant::{Constant, Controller, LoopConfig, NoiseConfig, Traditional, DEFAULT_STEPS, DEFAULT_THRESHOLD};
use crate::rl::{Policy, PolicyController};
use crate::surrogate::{ReluEmpc, ReluNet};

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_budget() -> u64 {
    DEFAULT_NODE_BUDGET
}

/// Which controller a scenario runs, with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControllerSpec {
    Traditional {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// Exact integer EMPC on the full column model.
    EmpcExact {
        #[serde(default = "default_budget")]
        node_budget: u64,
    },
    /// Sigmoid-relaxed EMPC on the full column model.
    EmpcSigmoid {
        #[serde(default)]
        solver: SigmoidConfig,
    },
    /// Exact EMPC on a trained surrogate.
    EmpcRelu {
        net: PathBuf,
        #[serde(default = "default_budget")]
        node_budget: u64,
    },
    RlPolicy { policy: PathBuf },
    /// Fixed action every step, 0 or 1.
    Constant { u_d: u8 },
}

impl ControllerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Traditional { .. } => "traditional",
            Self::EmpcExact { .. } => "empc-exact",
            Self::EmpcSigmoid { .. } => "empc-sigmoid",
            Self::EmpcRelu { .. } => "empc-relu",
            Self::RlPolicy { .. } => "rl-policy",
            Self::Constant { .. } => "constant",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Traditional { threshold } if !(*threshold > 0.0 && *threshold <= 1.0) => {
                Err(invalid("controller.threshold", "must lie in (0, 1]"))
            }
            Self::EmpcExact { node_budget } | Self::EmpcRelu { node_budget, .. } if *node_budget == 0 => {
                Err(invalid("controller.node_budget", "must be positive"))
            }
            Self::EmpcSigmoid { solver } => solver.validate(),
            Self::Constant { u_d } if *u_d > 1 => Err(invalid("controller.u_d", format!("must be 0 or 1, got {u_d}"))),
            _ => Ok(()),
        }
    }

    /// Model files the controller needs.
    pub fn artifacts(&self) -> Vec<&Path> {
        match self {
            Self::EmpcRelu { net, .. } => vec![net.as_path()],
            Self::RlPolicy { policy } => vec![policy.as_path()],
            _ => Vec::new(),
        }
    }

    fn resolve(&mut self, base: &Path) {
        match self {
            Self::EmpcRelu { net, .. } => *net = base.join(&*net),
            Self::RlPolicy { policy } => *policy = base.join(&*policy),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    #[serde(rename = "W_s")]
    pub w_s: f64,
    #[serde(rename = "W_d")]
    pub w_d: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { w_s: 1.0, w_d: 0.5 }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_controller() -> ControllerSpec {
    ControllerSpec::Traditional {
        threshold: DEFAULT_THRESHOLD,
    }
}

/// One closed-loop configuration, run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    /// Column parameter file; the calibrated defaults when absent.
    pub column: Option<PathBuf>,
    pub steps: usize,
    pub weights: Weights,
    /// Prediction horizon of the EMPC controllers.
    pub horizon: usize,
    pub controller: ControllerSpec,
    pub noise: NoiseConfig,
    pub seeds: Vec<u64>,
    pub nominal: ContinuousInput,
    pub step: StepConfig,
    /// Directory for result files.
    pub output: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            column: None,
            steps: DEFAULT_STEPS,
            weights: Weights::default(),
            horizon: 10,
            controller: default_controller(),
            noise: NoiseConfig::default(),
            seeds: default_seeds(),
            nominal: ContinuousInput::NOMINAL,
            step: StepConfig::default(),
            output: None,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "must list at least one seed"));
        }
        self.empc_weights().validate()?;
        self.controller.validate()?;
        self.noise.validate()?;
        self.step.validate()
    }

    pub fn empc_weights(&self) -> EmpcWeights {
        EmpcWeights::new(self.weights.w_s, self.weights.w_d, self.horizon)
    }

    pub fn column_params(&self) -> Result<ColumnParams> {
        match &self.column {
            Some(path) => ColumnParams::load(path),
            None => Ok(ColumnParams::default()),
        }
    }

    pub fn loop_config(&self, seed: u64) -> LoopConfig {
        LoopConfig {
            steps: self.steps,
            nominal: self.nominal,
            noise: NoiseConfig {
                seed,
                ..self.noise
            },
            step: self.step,
            record_states: false,
        }
    }

    /// Make relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(c) = self.column.as_mut() {
            *c = base.join(&*c);
        }
        if let Some(o) = self.output.as_mut() {
            *o = base.join(&*o);
        }
        self.controller.resolve(base);
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let scenario: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.into(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Read and validate a scenario file. Unknown keys are rejected; relative
/// paths inside the file are taken relative to it.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut scenario = Scenario::from_toml(&text, &path.display().to_string())?;
    if let Some(base) = path.parent() {
        scenario.resolve_paths(base);
    }
    Ok(scenario)
}

/// Instantiate the scenario's controller, loading any model artifact.
pub fn build_controller(spec: &ControllerSpec, column: &Column, scenario: &Scenario) -> Result<Box<dyn Controller + Send>> {
    let weights = scenario.empc_weights();
    Ok(match spec {
        ControllerSpec::Traditional { threshold } => Box::new(Traditional { threshold: *threshold }),
        ControllerSpec::EmpcExact { node_budget } => Box::new(ExactEmpc::new(
            GrmModel::new(column.clone(), scenario.step),
            weights,
            ExactConfig {
                node_budget: *node_budget,
            },
        )),
        ControllerSpec::EmpcSigmoid { solver } => Box::new(SigmoidEmpc::new(
            GrmModel::new(column.clone(), scenario.step),
            weights,
            *solver,
        )),
        ControllerSpec::EmpcRelu { net, node_budget } => Box::new(ReluEmpc::new(
            ReluNet::load(net)?,
            weights,
            ExactConfig {
                node_budget: *node_budget,
            },
        )),
        ControllerSpec::RlPolicy { policy } => Box::new(PolicyController::new(Policy::load(policy)?)),
        ControllerSpec::Constant { u_d } => Box::new(Constant(*u_d == 1)),
    })
}
