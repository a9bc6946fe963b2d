//! Economic MPC for the switching decision.
//!
//! Over a horizon of `N` steps the controller minimizes
//! `sum_i W_s * x_out(x_{i+1}) + W_d * u_i`, where a switch (`u_i = 1`)
//! replaces the predicted state by the fresh column. Two solvers are
//! provided: an exact branch-and-bound over `{0,1}^N` ([`solve_exact`]) and
//! the sigmoid relaxation solved by multistart projected BFGS
//! ([`solve_sigmoid`]).

mod controller;
mod exact;
mod models;
mod sigmoid;

pub use controller::{ExactEmpc, SigmoidEmpc};
pub use exact::{solve_exact, ExactConfig, ExactSolution, DEFAULT_NODE_BUDGET};
pub use models::{CascadeModel, GrmModel};
pub use sigmoid::{sigmoid, solve_sigmoid, SigmoidConfig, SigmoidSolution};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grm::ContinuousInput;

/// Cost weights and prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpcWeights {
    #[serde(rename = "W_s")]
    pub w_s: f64,
    #[serde(rename = "W_d")]
    pub w_d: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
}

impl Default for EmpcWeights {
    fn default() -> Self {
        Self {
            w_s: 1.0,
            w_d: 0.5,
            horizon: 10,
        }
    }
}

impl EmpcWeights {
    pub fn new(w_s: f64, w_d: f64, horizon: usize) -> Self {
        Self { w_s, w_d, horizon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_s.is_finite() && self.w_s >= 0.0) {
            return Err(invalid("W_s", format!("must be finite and >= 0, got {}", self.w_s)));
        }
        if !(self.w_d.is_finite() && self.w_d >= 0.0) {
            return Err(invalid("W_d", format!("must be finite and >= 0, got {}", self.w_d)));
        }
        if self.horizon == 0 {
            return Err(invalid("N", "horizon must be at least 1"));
        }
        Ok(())
    }
}

/// Cost of one stage.
#[inline]
pub fn stage_cost(x_out: f64, u_d: bool, w: &EmpcWeights) -> f64 {
    w.w_s * x_out + w.w_d * f64::from(u8::from(u_d))
}

/// A predictor the EMPC can roll forward.
pub trait SwitchingModel {
    type State: Clone;

    /// Predicted state after one step without switching.
    fn advance(&self, state: &Self::State, u_c: ContinuousInput) -> Result<Self::State>;

    /// State after a switch. Must give the same result for every state of a
    /// single prediction, since the exact solver shares post-switch subtrees.
    fn reset(&self, state: &Self::State) -> Self::State;

    fn outlet(&self, state: &Self::State) -> f64;
}

/// A predictor whose state can be scaled, as needed by the soft reset.
pub trait RelaxableModel: SwitchingModel {
    fn scale(&self, state: &Self::State, factor: f64) -> Self::State;
}

/// Predicted state after one stage.
pub fn predict_stage<M: SwitchingModel>(
    model: &M,
    state: &M::State,
    u_c: ContinuousInput,
    u_d: bool,
) -> Result<M::State> {
    if u_d {
        Ok(model.reset(state))
    } else {
        model.advance(state, u_c)
    }
}

/// Horizon cost of `sequence` by direct simulation, summed stage by stage.
pub fn sequence_cost<M: SwitchingModel>(
    model: &M,
    state: &M::State,
    u_c: ContinuousInput,
    sequence: &[bool],
    w: &EmpcWeights,
) -> Result<f64> {
    let mut x = state.clone();
    let mut cost = 0.0;
    for &u in sequence {
        x = predict_stage(model, &x, u_c, u)?;
        cost += stage_cost(model.outlet(&x), u, w);
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_cost_arithmetic() {
        let w = EmpcWeights::new(1.0, 0.5, 1);
        assert_eq!(stage_cost(0.0, false, &w), 0.0);
        assert_eq!(stage_cost(1.0, true, &w), 1.5);
        // Loss of 0.24205 spread over a horizon with three switches.
        let parts = [0.1, 0.04205, 0.1];
        let total: f64 = parts.iter().map(|&x| stage_cost(x, true, &w)).sum();
        assert!((total - 1.74205).abs() < 1e-12);
    }

    #[test]
    fn weights_validate() {
        assert!(EmpcWeights::new(1.0, 0.5, 0).validate().is_err());
        assert!(EmpcWeights::new(-1.0, 0.5, 3).validate().is_err());
        assert!(EmpcWeights::new(1.0, f64::NAN, 3).validate().is_err());
        assert!(EmpcWeights::default().validate().is_ok());
    }
}
