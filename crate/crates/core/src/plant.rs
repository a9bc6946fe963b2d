//! The switching plant: column dynamics with a reset action, noise injection,
//! closed-loop simulation and economic metrics.
//!
//! Steps are 1-based throughout. At step `k` the plant holds state `x_k`, the
//! controller sees the measured outlet of `x_k` and picks `u_d`; a switch
//! swaps in the fresh twin column, so `x_{k+1}` is the zero state and no
//! loading happens during that step.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grm::{outlet_concentration, Column, ColumnState, ContinuousInput, StepConfig};

/// Default breakthrough threshold of the traditional policy (fraction of c_F).
pub const DEFAULT_THRESHOLD: f64 = 0.01;
/// Default closed-loop length in macro steps.
pub const DEFAULT_STEPS: usize = 50;

/// Inputs applied over one macro step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantInput {
    pub u_c: ContinuousInput,
    /// `true` switches to the fresh column.
    pub u_d: bool,
}

/// Process and measurement noise settings. Standard deviations are absolute,
/// in the units of the quantity they perturb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub process_std: f64,
    /// Overrides `process_std` for the feed concentration.
    pub process_std_feed: Option<f64>,
    /// Overrides `process_std` for the flow rate.
    pub process_std_flow: Option<f64>,
    pub meas_alpha: f64,
    pub meas_std: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            process_std: 0.0,
            process_std_feed: None,
            process_std_flow: None,
            meas_alpha: 0.0,
            meas_std: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn feed_std(&self) -> f64 {
        self.process_std_feed.unwrap_or(self.process_std)
    }

    pub fn flow_std(&self) -> f64 {
        self.process_std_flow.unwrap_or(self.process_std)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("noise.process_std", self.process_std),
            ("noise.process_std_feed", self.feed_std()),
            ("noise.process_std_flow", self.flow_std()),
            ("noise.meas_alpha", self.meas_alpha),
            ("noise.meas_std", self.meas_std),
        ];
        for (field, v) in checks {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.feed_std() == 0.0 && self.flow_std() == 0.0 && self.meas_noise_scale() == 0.0
    }

    fn meas_noise_scale(&self) -> f64 {
        self.meas_alpha * self.meas_std
    }
}

/// Independent random streams for process and measurement noise, so that
/// turning one source on or off leaves the draws of the other untouched.
#[derive(Debug, Clone)]
pub struct NoiseStreams {
    pub process: ChaCha8Rng,
    pub measurement: ChaCha8Rng,
}

impl NoiseStreams {
    pub fn new(seed: u64) -> Self {
        let mut process = ChaCha8Rng::seed_from_u64(seed);
        process.set_stream(1);
        let mut measurement = ChaCha8Rng::seed_from_u64(seed);
        measurement.set_stream(2);
        Self {
            process,
            measurement,
        }
    }
}

/// Advance the plant one macro step.
pub fn plant_step(
    column: &Column,
    state: &ColumnState,
    input: PlantInput,
    cfg: &StepConfig,
) -> Result<ColumnState> {
    if input.u_d {
        Ok(column.zero_state())
    } else {
        column.integrate_step(state, input.u_c, cfg)
    }
}

/// Add zero-mean Gaussian noise to both continuous inputs, clamped at zero.
/// No draw is taken for an input whose standard deviation is zero.
pub fn perturb_inputs<R: Rng + ?Sized>(
    u_c: ContinuousInput,
    noise: &NoiseConfig,
    rng: &mut R,
) -> ContinuousInput {
    ContinuousInput {
        c_f: jitter(u_c.c_f, noise.feed_std(), rng),
        q: jitter(u_c.q, noise.flow_std(), rng),
    }
}

fn jitter<R: Rng + ?Sized>(value: f64, std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return value;
    }
    let z: f64 = rng.sample(StandardNormal);
    (value + std * z).max(0.0)
}

/// Noisy outlet reading `y = x_out + alpha * N(0, meas_std^2)`, clamped at zero.
pub fn measure<R: Rng + ?Sized>(x_out: f64, noise: &NoiseConfig, rng: &mut R) -> f64 {
    let scale = noise.meas_noise_scale();
    if scale == 0.0 {
        return x_out;
    }
    let z: f64 = rng.sample(StandardNormal);
    (x_out + scale * z).max(0.0)
}

/// The 1% breakthrough rule.
pub fn traditional_decide(y: f64, c_f: f64, threshold: f64) -> bool {
    y >= threshold * c_f
}

/// What a controller sees at the start of a step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// 1-based step index.
    pub step: usize,
    /// Measured outlet concentration.
    pub y: f64,
    /// Plant state with the outlet entry replaced by `y`.
    pub state: &'a ColumnState,
    /// Continuous inputs that will be applied over this step.
    pub u_c: ContinuousInput,
}

/// A switching policy.
pub trait Controller {
    fn name(&self) -> String;

    /// Clear any per-run memory before a new closed loop.
    fn reset(&mut self) {}

    fn decide(&mut self, obs: &Observation<'_>) -> Result<bool>;
}

/// Switch once the measured outlet reaches `threshold * c_F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Traditional {
    pub threshold: f64,
}

impl Default for Traditional {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl Controller for Traditional {
    fn name(&self) -> String {
        "traditional".into()
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<bool> {
        Ok(traditional_decide(obs.y, obs.u_c.c_f, self.threshold))
    }
}

/// Always emits the same decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub bool);

impl Controller for Constant {
    fn name(&self) -> String {
        format!("constant_{}", u8::from(self.0))
    }

    fn decide(&mut self, _obs: &Observation<'_>) -> Result<bool> {
        Ok(self.0)
    }
}

/// Closed-loop run settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub steps: usize,
    /// Nominal continuous inputs before process noise.
    pub nominal: ContinuousInput,
    pub noise: NoiseConfig,
    pub step: StepConfig,
    /// Keep the full plant state at the start of every step.
    pub record_states: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            nominal: ContinuousInput::NOMINAL,
            noise: NoiseConfig::default(),
            step: StepConfig::default(),
            record_states: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub c_f: f64,
    pub q: f64,
    #[serde(with = "bool_as_int")]
    pub u_d: bool,
    pub x_out: f64,
    pub y: f64,
    pub solve_seconds: f64,
}

mod bool_as_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("u_d must be 0 or 1, got {other}"))),
        }
    }
}

/// Record of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub controller: String,
    pub records: Vec<StepRecord>,
    /// Start-of-step states when requested, one per record.
    pub states: Option<Vec<ColumnState>>,
    /// Set when the run stopped early; `records` then holds the completed steps.
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn switch_steps(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.u_d).map(|r| r.step).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run `controller` against the plant from the zero state.
///
/// Each step: draw the continuous inputs, measure, decide, apply, record.
/// Failures (integration or controller) end the run; the partial trajectory
/// carries the diagnostic in `failure`.
pub fn run_closed_loop(
    column: &Column,
    controller: &mut dyn Controller,
    cfg: &LoopConfig,
) -> Result<Trajectory> {
    cfg.noise.validate()?;
    cfg.step.validate()?;
    controller.reset();
    let mut streams = NoiseStreams::new(cfg.noise.seed);
    let mut traj = Trajectory {
        controller: controller.name(),
        records: Vec::with_capacity(cfg.steps),
        states: cfg.record_states.then(Vec::new),
        failure: None,
    };
    let mut state = column.zero_state();
    let mut seen = state.clone();
    let outlet = state.outlet_index();
    for step in 1..=cfg.steps {
        let u_c = perturb_inputs(cfg.nominal, &cfg.noise, &mut streams.process);
        let x_out = outlet_concentration(&state);
        let y = measure(x_out, &cfg.noise, &mut streams.measurement);
        seen.as_mut_slice().copy_from_slice(state.as_slice());
        seen.as_mut_slice()[outlet] = y;
        let obs = Observation {
            step,
            y,
            state: &seen,
            u_c,
        };
        let started = Instant::now();
        let u_d = match controller.decide(&obs) {
            Ok(u) => u,
            Err(e) => {
                traj.failure = Some(format!("controller failed at step {step}: {e}"));
                return Ok(traj);
            }
        };
        let solve_seconds = started.elapsed().as_secs_f64();
        let next = match plant_step(column, &state, PlantInput { u_c, u_d }, &cfg.step) {
            Ok(next) => next,
            Err(e) => {
                traj.failure = Some(format!("integration failed at step {step}: {e}"));
                return Ok(traj);
            }
        };
        traj.records.push(StepRecord {
            step,
            c_f: u_c.c_f,
            q: u_c.q,
            u_d,
            x_out,
            y,
            solve_seconds,
        });
        if let Some(states) = traj.states.as_mut() {
            states.push(state);
        }
        state = next;
    }
    Ok(traj)
}

/// Economic summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Product loss: sum of true outlet concentrations (mg/L).
    pub pl: f64,
    /// Total cost `W_s * PL + W_d * switches`.
    pub tc: f64,
    pub switches: usize,
    pub switch_steps: Vec<usize>,
}

pub fn compute_metrics(traj: &Trajectory, w_s: f64, w_d: f64) -> Metrics {
    let pl: f64 = traj.records.iter().map(|r| r.x_out).sum();
    let switch_steps = traj.switch_steps();
    let switches = switch_steps.len();
    Metrics {
        pl,
        tc: w_s * pl + w_d * switches as f64,
        switches,
        switch_steps,
    }
}

impl Metrics {
    /// Switch steps as a `;`-joined string for CSV cells.
    pub fn switch_steps_cell(&self) -> String {
        self.switch_steps
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Gaps between consecutive switches.
    pub fn intervals(&self) -> Vec<usize> {
        self.switch_steps.windows(2).map(|w| w[1] - w[0]).collect()
    }
}
