//! Training and export jobs driven by TOML files.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenario::Weights;
use crate::empc::EmpcWeights;
use crate::error::{invalid, Error, Result};
use crate::grm::{Column, ColumnParams, ContinuousInput, StepConfig};
use crate::plant::LoopConfig;
use crate::rl::{train_best_of, AgentConfig, EnvConfig, Policy};
use crate::surrogate::{
    encode_milp, evaluate_one_step, generate_dataset, propagate_bounds, rollout_errors, train_network, Dataset,
    ExcitationConfig, History, InputBox, ReluNet, Split, TrainConfig, VerifyReport,
};

/// Parse a TOML job file, resolving relative paths against its directory.
pub fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn column_from(path: &Option<PathBuf>) -> Result<Column> {
    Column::new(match path {
        Some(p) => ColumnParams::load(p)?,
        None => ColumnParams::default(),
    })
}

fn rebase(path: &mut Option<PathBuf>, base: &Path) {
    if let Some(p) = path.as_mut() {
        *p = base.join(&*p);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateJob {
    pub column: Option<PathBuf>,
    pub size: usize,
    pub excitation: ExcitationConfig,
    pub train: TrainConfig,
    pub step: StepConfig,
    /// Recursive-prediction length of the rollout check.
    pub rollout_horizon: usize,
}

impl Default for SurrogateJob {
    fn default() -> Self {
        Self {
            column: None,
            size: 50_000,
            excitation: ExcitationConfig::default(),
            train: TrainConfig::default(),
            step: StepConfig::default(),
            rollout_horizon: 20,
        }
    }
}

/// Held-out errors of a trained surrogate, in mg/L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateScore {
    pub test_rmse: f64,
    pub rollout_max_error: f64,
    pub feed: f64,
}

impl SurrogateJob {
    pub fn resolve_paths(&mut self, base: &Path) {
        rebase(&mut self.column, base);
    }

    pub fn dataset(&self) -> Result<Dataset> {
        generate_dataset(&column_from(&self.column)?, &self.step, &self.excitation, self.size)
    }

    pub fn score(&self, net: &ReluNet, ds: &Dataset) -> Result<SurrogateScore> {
        Ok(SurrogateScore {
            test_rmse: evaluate_one_step(net, ds.split(Split::Test))?,
            rollout_max_error: rollout_errors(net, &ds.episodes(Split::Test), self.rollout_horizon, 1)?,
            feed: self.excitation.nominal.c_f,
        })
    }

    /// Generate data, train and write `dataset.csv`, `net.json` and
    /// `training_log.csv` into `out`.
    pub fn run(&self, out: &Path) -> Result<(ReluNet, SurrogateScore)> {
        fs::create_dir_all(out)?;
        let ds = self.dataset()?;
        ds.write_csv(File::create(out.join("dataset.csv"))?)?;
        let (net, report) = train_network(&ds, &self.train)?;
        net.save(&out.join("net.json"))?;
        let mut w = csv::Writer::from_path(out.join("training_log.csv"))?;
        for e in &report.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
        let score = self.score(&net, &ds)?;
        Ok((net, score))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlJob {
    pub column: Option<PathBuf>,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    /// Length of the closed-loop run that ranks the seeds.
    pub eval_steps: usize,
}

impl Default for RlJob {
    fn default() -> Self {
        Self {
            column: None,
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            eval_steps: 50,
        }
    }
}

impl RlJob {
    pub fn resolve_paths(&mut self, base: &Path) {
        rebase(&mut self.column, base);
    }

    /// Train `agent.seeds` policies starting at `first_seed` and keep the one
    /// with the lowest closed-loop TC. Writes `policy.json`,
    /// `training_log.csv` and `seed_scores.csv`.
    pub fn run(&self, first_seed: u64, out: &Path) -> Result<(Policy, Vec<(u64, f64)>)> {
        fs::create_dir_all(out)?;
        let column = column_from(&self.column)?;
        let seeds: Vec<u64> = (0..self.agent.seeds as u64).map(|s| first_seed + s).collect();
        let eval = LoopConfig {
            steps: self.eval_steps,
            nominal: self.env.nominal,
            noise: self.env.noise,
            step: self.env.step,
            record_states: false,
        };
        let (best, scores) = train_best_of(&column, &self.env, &self.agent, &seeds, &eval)?;
        best.policy.save(&out.join("policy.json"))?;
        best.write_log_csv(File::create(out.join("training_log.csv"))?)?;
        let mut w = csv::Writer::from_path(out.join("seed_scores.csv"))?;
        w.write_record(["seed", "TC"])?;
        for (seed, tc) in &scores {
            w.write_record([seed.to_string(), tc.to_string()])?;
        }
        w.flush()?;
        Ok((best.policy, scores))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodeJob {
    pub net: PathBuf,
    pub horizon: usize,
    pub weights: Weights,
    /// Upper bound on the outlet over the input box, mg/L.
    pub y_max: f64,
    /// Relative spread of the inputs around nominal.
    pub spread: f64,
    pub nominal: ContinuousInput,
    /// Outlet history the problem starts from.
    pub y: f64,
    pub y_prev: f64,
    /// Random points checked against the encoding.
    pub verify_samples: usize,
    pub seed: u64,
}

impl Default for EncodeJob {
    fn default() -> Self {
        Self {
            net: PathBuf::from("net.json"),
            horizon: 10,
            weights: Weights::default(),
            y_max: 80.0,
            spread: 0.3,
            nominal: ContinuousInput::NOMINAL,
            y: 0.0,
            y_prev: 0.0,
            verify_samples: 1000,
            seed: 0,
        }
    }
}

impl EncodeJob {
    pub fn resolve_paths(&mut self, base: &Path) {
        self.net = base.join(&self.net);
    }

    /// Verify the encoding on random inputs and write it as `problem.lp`.
    pub fn run(&self, out: &Path) -> Result<VerifyReport> {
        use rand::SeedableRng;
        if self.y_max <= 0.0 {
            return Err(invalid("y_max", "must be positive"));
        }
        fs::create_dir_all(out)?;
        let net = ReluNet::load(&self.net)?;
        let input_box = InputBox::operating(self.y_max, self.nominal, self.spread);
        let bounds = propagate_bounds(&net, &input_box)?;
        let history = History {
            y: self.y,
            y_prev: self.y_prev,
            u_prev: if self.y == 0.0 && self.y_prev == 0.0 {
                History::ZERO.u_prev
            } else {
                self.nominal
            },
        };
        let w = EmpcWeights::new(self.weights.w_s, self.weights.w_d, self.horizon);
        let enc = encode_milp(&net, &bounds, &w, history, self.nominal)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let samples: Vec<Vec<f64>> = (0..self.verify_samples).map(|_| input_box.sample(&mut rng)).collect();
        let report = crate::surrogate::verify_encoding(&enc, &net, &samples);
        enc.write_lp(File::create(out.join("problem.lp"))?)?;
        Ok(report)
    }
}
