//! Episodic switching environment and a PPO agent.
//!
//! The environment follows the plant loop exactly: at each step the process
//! noise draw, the measurement and the observation come first, then the
//! action is applied. The reward is the negated stage cost
//! `-(W_s x_out,k + W_d u_k)`, so the undiscounted return of an episode is the
//! negated total cost of that window.

mod ppo;

pub use ppo::{train_best_of, train_ppo, AgentConfig, BatchLog, TrainedPolicy};

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grm::{outlet_concentration, Column, ColumnParams, ColumnState, ContinuousInput, Site, StepConfig};
use crate::nn::Mlp;
use crate::plant::{
    compute_metrics, measure, perturb_inputs, plant_step, run_closed_loop, Controller, LoopConfig, Metrics,
    NoiseConfig, NoiseStreams, Observation, PlantInput,
};

/// Serialization format version of [`Policy`].
pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObservationMode {
    /// The whole column state with the outlet entry replaced by the reading.
    FullState,
    /// The last `len` outlet readings, newest first.
    OutletHistory { len: usize },
}

impl Default for ObservationMode {
    fn default() -> Self {
        Self::FullState
    }
}

impl ObservationMode {
    pub fn dim(&self, params: &ColumnParams) -> usize {
        match *self {
            Self::FullState => params.state_len(),
            Self::OutletHistory { len } => len,
        }
    }

    /// Per-entry scale: liquid phase by the feed concentration, bound phases
    /// by their capacities.
    pub fn scale(&self, params: &ColumnParams, nominal: ContinuousInput) -> Vec<f64> {
        let c = 1.0 / nominal.c_f;
        match *self {
            Self::FullState => {
                let stride = params.stride();
                (0..params.state_len())
                    .map(|i| match i % stride {
                        k if k == stride - 2 => 1.0 / params.q_max(Site::One),
                        k if k == stride - 1 => 1.0 / params.q_max(Site::Two),
                        _ => c,
                    })
                    .collect()
            }
            Self::OutletHistory { len } => vec![c; len],
        }
    }
}

/// Turns plant observations into raw policy inputs, keeping the reading
/// history the outlet-history mode needs.
#[derive(Debug, Clone)]
pub struct ObservationBuilder {
    pub mode: ObservationMode,
    history: VecDeque<f64>,
}

impl ObservationBuilder {
    pub fn new(mode: ObservationMode) -> Self {
        Self {
            mode,
            history: VecDeque::new(),
        }
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn build(&mut self, obs: &Observation<'_>) -> Vec<f64> {
        match self.mode {
            ObservationMode::FullState => obs.state.as_slice().to_vec(),
            ObservationMode::OutletHistory { len } => {
                self.history.push_front(obs.y);
                self.history.truncate(len);
                let mut v: Vec<f64> = self.history.iter().copied().collect();
                v.resize(len, 0.0);
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub steps_per_episode: usize,
    #[serde(rename = "W_s")]
    pub w_s: f64,
    #[serde(rename = "W_d")]
    pub w_d: f64,
    pub observation: ObservationMode,
    pub nominal: ContinuousInput,
    pub noise: NoiseConfig,
    pub step: StepConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            steps_per_episode: 20,
            w_s: 1.0,
            w_d: 0.5,
            observation: ObservationMode::FullState,
            nominal: ContinuousInput::NOMINAL,
            noise: NoiseConfig::default(),
            step: StepConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_episode == 0 {
            return Err(invalid("steps_per_episode", "must be at least 1"));
        }
        if !(self.w_s >= 0.0 && self.w_d >= 0.0) {
            return Err(invalid("W_s", "weights must be non-negative"));
        }
        if let ObservationMode::OutletHistory { len: 0 } = self.observation {
            return Err(invalid("observation.len", "must be at least 1"));
        }
        self.noise.validate()?;
        self.step.validate()
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Raw observation at the start of the next step.
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// True outlet concentration charged by this step.
    pub x_out: f64,
}

/// The switching plant as an episodic environment. Episodes start from a
/// fresh column.
pub struct Env {
    column: Column,
    cfg: EnvConfig,
    streams: NoiseStreams,
    builder: ObservationBuilder,
    state: ColumnState,
    /// Without process noise the state is a function of the steps since the
    /// last switch; those states are computed once and reused.
    chain: Option<Vec<ColumnState>>,
    since_reset: usize,
    step: usize,
    u_c: ContinuousInput,
    done: bool,
}

impl Env {
    pub fn new(column: Column, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let deterministic_state = cfg.noise.feed_std() == 0.0 && cfg.noise.flow_std() == 0.0;
        let zero = column.zero_state();
        Ok(Self {
            streams: NoiseStreams::new(cfg.noise.seed),
            builder: ObservationBuilder::new(cfg.observation),
            chain: deterministic_state.then(|| vec![zero.clone()]),
            state: zero,
            since_reset: 0,
            step: 0,
            u_c: cfg.nominal,
            done: true,
            column,
            cfg,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn column(&self) -> &Column {
        &self.column
    }

    pub fn state(&self) -> &ColumnState {
        &self.state
    }

    pub fn observation_dim(&self) -> usize {
        self.cfg.observation.dim(self.column.params())
    }

    /// Start an episode from a fresh column and return the first observation.
    /// Noise streams continue across episodes.
    pub fn reset(&mut self) -> Vec<f64> {
        self.state = self.column.zero_state();
        self.since_reset = 0;
        self.step = 0;
        self.done = false;
        self.builder.reset();
        self.observe()
    }

    fn observe(&mut self) -> Vec<f64> {
        self.u_c = perturb_inputs(self.cfg.nominal, &self.cfg.noise, &mut self.streams.process);
        let x_out = outlet_concentration(&self.state);
        let y = measure(x_out, &self.cfg.noise, &mut self.streams.measurement);
        let mut seen = self.state.clone();
        let outlet = seen.outlet_index();
        seen.as_mut_slice()[outlet] = y;
        self.builder.build(&Observation {
            step: self.step + 1,
            y,
            state: &seen,
            u_c: self.u_c,
        })
    }

    pub fn step(&mut self, action: bool) -> Result<Transition> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let x_out = outlet_concentration(&self.state);
        let reward = -(self.cfg.w_s * x_out + if action { self.cfg.w_d } else { 0.0 });
        if action {
            self.state = self.column.zero_state();
            self.since_reset = 0;
        } else if let Some(chain) = self.chain.as_mut() {
            self.since_reset += 1;
            if chain.len() <= self.since_reset {
                let next = self
                    .column
                    .integrate_step(&chain[chain.len() - 1], self.cfg.nominal, &self.cfg.step)?;
                chain.push(next);
            }
            self.state = chain[self.since_reset].clone();
        } else {
            let input = PlantInput {
                u_c: self.u_c,
                u_d: false,
            };
            self.state = plant_step(&self.column, &self.state, input, &self.cfg.step)?;
            self.since_reset += 1;
        }
        self.step += 1;
        self.done = self.step >= self.cfg.steps_per_episode;
        Ok(Transition {
            observation: self.observe(),
            reward,
            done: self.done,
            x_out,
        })
    }
}

/// Actor and critic with the observation scaling they were trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub version: u32,
    pub observation: ObservationMode,
    pub obs_scale: Vec<f64>,
    /// Observation to switch logit.
    pub actor: Mlp,
    /// Observation to state value.
    pub critic: Mlp,
}

/// Logistic function.
pub fn probability_of_logit(logit: f64) -> f64 {
    1.0 / (1.0 + (-logit).exp())
}

/// Action from a switch probability: threshold at 0.5 or sample.
pub fn choose<R: Rng + ?Sized>(p: f64, deterministic: bool, rng: &mut R) -> bool {
    if deterministic {
        p >= 0.5
    } else {
        rng.random::<f64>() < p
    }
}

impl Policy {
    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.obs_scale).map(|(x, s)| x * s).collect()
    }

    pub fn logit(&self, raw: &[f64]) -> f64 {
        self.actor.forward(&self.normalize(raw))[0]
    }

    /// Probability of switching.
    pub fn probability(&self, raw: &[f64]) -> f64 {
        probability_of_logit(self.logit(raw))
    }

    pub fn value(&self, raw: &[f64]) -> f64 {
        self.critic.forward(&self.normalize(raw))[0]
    }

    pub fn act<R: Rng + ?Sized>(&self, raw: &[f64], deterministic: bool, rng: &mut R) -> bool {
        choose(self.probability(raw), deterministic, rng)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != POLICY_FORMAT_VERSION {
            return Err(Error::Parse {
                path: "policy".into(),
                message: format!("unsupported format version {}", self.version),
            });
        }
        for net in [&self.actor, &self.critic] {
            if net.n_inputs() != self.obs_scale.len() {
                return Err(Error::Dimension {
                    expected: self.obs_scale.len(),
                    got: net.n_inputs(),
                });
            }
            if net.n_outputs() != 1 {
                return Err(Error::Dimension {
                    expected: 1,
                    got: net.n_outputs(),
                });
            }
        }
        Ok(())
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
        let policy: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        policy.validate()?;
        Ok(policy)
    }
}

/// A trained policy acting deterministically in the closed loop.
pub struct PolicyController {
    pub policy: Policy,
    builder: ObservationBuilder,
}

impl PolicyController {
    pub fn new(policy: Policy) -> Self {
        Self {
            builder: ObservationBuilder::new(policy.observation),
            policy,
        }
    }
}

impl Controller for PolicyController {
    fn name(&self) -> String {
        "rl".into()
    }

    fn reset(&mut self) {
        self.builder.reset();
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<bool> {
        let raw = self.builder.build(obs);
        Ok(self.policy.probability(&raw) >= 0.5)
    }
}

/// Closed-loop metrics of a policy over replicate noise seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub runs: Vec<(u64, Metrics)>,
    pub mean_pl: f64,
    pub mean_tc: f64,
    pub mean_switches: f64,
}

impl Evaluation {
    pub fn from_runs(runs: Vec<(u64, Metrics)>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = |f: &dyn Fn(&Metrics) -> f64| runs.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
        let (mean_pl, mean_tc, mean_switches) = (mean(&|m| m.pl), mean(&|m| m.tc), mean(&|m| m.switches as f64));
        Self {
            runs,
            mean_pl,
            mean_tc,
            mean_switches,
        }
    }
}

/// Run the policy deterministically once per seed; `cfg.noise.seed` is
/// replaced by each seed in turn.
pub fn evaluate_policy(
    column: &Column,
    policy: &Policy,
    cfg: &LoopConfig,
    seeds: &[u64],
    w_s: f64,
    w_d: f64,
) -> Result<Evaluation> {
    let mut runs = Vec::with_capacity(seeds.len());
    let mut controller = PolicyController::new(policy.clone());
    for &seed in seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.noise.seed = seed;
        let traj = run_closed_loop(column, &mut controller, &run_cfg)?;
        if let Some(failure) = traj.failure {
            return Err(Error::RunFailed(failure));
        }
        runs.push((seed, compute_metrics(&traj, w_s, w_d)));
    }
    Ok(Evaluation::from_runs(runs))
}

/// Sample an action stream for tests and smoke runs.
pub fn rollout_episode(env: &mut Env, policy: &Policy, deterministic: bool, rng: &mut ChaCha8Rng) -> Result<Vec<Transition>> {
    let mut obs = env.reset();
    let mut out = Vec::with_capacity(env.config().steps_per_episode);
    loop {
        let a = policy.act(&obs, deterministic, rng);
        let t = env.step(a)?;
        obs = t.observation.clone();
        let done = t.done;
        out.push(t);
        if done {
            return Ok(out);
        }
    }
}
