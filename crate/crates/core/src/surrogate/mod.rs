//! ReLU network surrogate of the outlet dynamics and the EMPC built on it.
//!
//! The network maps `[y_t, y_{t-1}, cF_t, Q_t, cF_{t-1}, Q_{t-1}]` to
//! `y_{t+1}`. After a switch the lag window restarts from zero: `y`, `y_prev`
//! and the previous inputs are all zero, the same convention used when
//! generating training data from a fresh column.

mod data;
mod milp;
mod train;

pub use data::{generate_dataset, Dataset, ExcitationConfig, Sample, Split};
pub use milp::{
    encode_milp, propagate_bounds, verify_encoding, ConstraintKind, InputBox, LayerBounds,
    Block, LinearConstraint, MilpEncoding, Sense, Variable, VerifyReport,
};
pub use train::{evaluate_one_step, rollout_errors, train_network, EpochLog, TrainConfig, TrainReport};

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::empc::{solve_exact, EmpcWeights, ExactConfig, ExactSolution, SwitchingModel};
use crate::error::{Error, Result};
use crate::grm::ContinuousInput;
use crate::nn::Mlp;
use crate::plant::{Controller, Observation};

/// Number of input features.
pub const N_FEATURES: usize = 6;
/// Input feature names, in network order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["y_t", "y_t-1", "cF_t", "Q_t", "cF_t-1", "Q_t-1"];
/// Serialization format version.
pub const FORMAT_VERSION: u32 = 1;

/// Trained surrogate with its normalization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluNet {
    pub version: u32,
    pub features: Vec<String>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: f64,
    pub output_std: f64,
    pub mlp: Mlp,
}

impl ReluNet {
    /// Wrap `mlp` with identity normalization.
    pub fn from_mlp(mlp: Mlp) -> Self {
        let n = mlp.n_inputs();
        Self {
            version: FORMAT_VERSION,
            features: (0..n)
                .map(|i| match FEATURE_NAMES.get(i) {
                    Some(name) if n == N_FEATURES => name.to_string(),
                    _ => format!("x{i}"),
                })
                .collect(),
            input_mean: vec![0.0; n],
            input_std: vec![1.0; n],
            output_mean: 0.0,
            output_std: 1.0,
            mlp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Parse {
                path: "surrogate".into(),
                message: format!("unsupported format version {}", self.version),
            });
        }
        let n = self.mlp.n_inputs();
        for len in [self.input_mean.len(), self.input_std.len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        for pair in self.mlp.layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::Dimension {
                    expected: pair[0].n_out,
                    got: pair[1].n_in,
                });
            }
        }
        let consts = self
            .input_mean
            .iter()
            .chain(&self.input_std)
            .chain([&self.output_mean, &self.output_std]);
        if let Some(index) = consts.clone().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "normalization constants",
                index,
            });
        }
        if self.input_std.iter().chain([&self.output_std]).any(|s| *s <= 0.0) {
            return Err(Error::Parse {
                path: "surrogate".into(),
                message: "normalization scales must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn normalize(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Network output before clamping, in physical units.
    pub fn raw_output(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.mlp.n_inputs() {
            return Err(Error::Dimension {
                expected: self.mlp.n_inputs(),
                got: features.len(),
            });
        }
        let out = self.mlp.forward(&self.normalize(features))[0];
        Ok(self.output_mean + self.output_std * out)
    }

    /// Predicted next outlet concentration, clamped at zero.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        Ok(self.raw_output(features)?.max(0.0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let net: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        net.validate()?;
        Ok(net)
    }
}

/// Lag window of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct History {
    pub y: f64,
    pub y_prev: f64,
    /// Inputs applied over the previous step.
    pub u_prev: ContinuousInput,
}

impl History {
    /// Window of a fresh column.
    pub const ZERO: Self = Self {
        y: 0.0,
        y_prev: 0.0,
        u_prev: ContinuousInput { c_f: 0.0, q: 0.0 },
    };

    pub fn features(&self, u_c: ContinuousInput) -> [f64; N_FEATURES] {
        [self.y, self.y_prev, u_c.c_f, u_c.q, self.u_prev.c_f, self.u_prev.q]
    }
}

/// Recursive prediction under per-stage inputs. A switch at stage `i` gives
/// `y_{i+1} = 0` and restarts the window.
pub fn rollout_inputs(net: &ReluNet, history: History, plan: &[(bool, ContinuousInput)]) -> Result<Vec<f64>> {
    let mut h = history;
    let mut out = Vec::with_capacity(plan.len());
    for &(u_d, u_c) in plan {
        h = if u_d {
            History::ZERO
        } else {
            History {
                y: net.predict(&h.features(u_c))?,
                y_prev: h.y,
                u_prev: u_c,
            }
        };
        out.push(h.y);
    }
    Ok(out)
}

/// Recursive prediction with the continuous inputs held at `u_c`.
pub fn rollout(net: &ReluNet, history: History, u_d: &[bool], u_c: ContinuousInput) -> Result<Vec<f64>> {
    let plan: Vec<(bool, ContinuousInput)> = u_d.iter().map(|&u| (u, u_c)).collect();
    rollout_inputs(net, history, &plan)
}

/// The surrogate as an EMPC predictor.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateModel<'a> {
    pub net: &'a ReluNet,
}

impl SwitchingModel for SurrogateModel<'_> {
    type State = History;

    fn advance(&self, state: &History, u_c: ContinuousInput) -> Result<History> {
        Ok(History {
            y: self.net.predict(&state.features(u_c))?,
            y_prev: state.y,
            u_prev: u_c,
        })
    }

    fn reset(&self, _state: &History) -> History {
        History::ZERO
    }

    fn outlet(&self, state: &History) -> f64 {
        state.y
    }
}

/// Exact surrogate EMPC over the switching binaries.
pub fn solve_relu_empc(
    net: &ReluNet,
    history: History,
    u_c: ContinuousInput,
    w: &EmpcWeights,
    cfg: &ExactConfig,
) -> Result<ExactSolution> {
    solve_exact(&SurrogateModel { net }, &history, u_c, w, cfg)
}

/// Receding-horizon controller using only the measured outlet.
pub struct ReluEmpc {
    pub net: ReluNet,
    pub weights: EmpcWeights,
    pub config: ExactConfig,
    last: Option<(f64, ContinuousInput, bool)>,
    cache: HashMap<[u64; N_FEATURES], bool>,
}

impl ReluEmpc {
    pub fn new(net: ReluNet, weights: EmpcWeights, config: ExactConfig) -> Self {
        Self {
            net,
            weights,
            config,
            last: None,
            cache: HashMap::new(),
        }
    }

    fn history(&self, y: f64) -> History {
        match self.last {
            Some((y_prev, u_prev, false)) => History { y, y_prev, u_prev },
            _ => History { y, ..History::ZERO },
        }
    }
}

impl Controller for ReluEmpc {
    fn name(&self) -> String {
        "empc-relu".into()
    }

    fn reset(&mut self) {
        self.last = None;
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<bool> {
        let history = self.history(obs.y);
        let key = history.features(obs.u_c).map(f64::to_bits);
        let u = match self.cache.get(&key) {
            Some(&u) => u,
            None => {
                let sol = solve_relu_empc(&self.net, history, obs.u_c, &self.weights, &self.config)?;
                self.cache.insert(key, sol.sequence[0]);
                sol.sequence[0]
            }
        };
        self.last = Some((obs.y, obs.u_c, u));
        Ok(u)
    }
}
