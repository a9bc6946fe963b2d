//! Receding-horizon controllers over the full plant state.

use std::collections::HashMap;

use super::{solve_exact, solve_sigmoid, EmpcWeights, ExactConfig, RelaxableModel, SigmoidConfig, SwitchingModel};
use crate::error::Result;
use crate::grm::{ColumnState, ContinuousInput};
use crate::plant::{Controller, Observation};

/// Exact key of a solve: state and input bit patterns.
fn solve_key(state: &ColumnState, u_c: ContinuousInput) -> Vec<u64> {
    let mut key: Vec<u64> = state.as_slice().iter().map(|v| v.to_bits()).collect();
    key.push(u_c.c_f.to_bits());
    key.push(u_c.q.to_bits());
    key
}

/// Applies the first move of the exact optimum. Solves are cached by exact
/// state, which makes deterministic runs cheap after the first cycle.
pub struct ExactEmpc<M> {
    pub model: M,
    pub weights: EmpcWeights,
    pub config: ExactConfig,
    cache: HashMap<Vec<u64>, bool>,
    pub nodes_expanded: u64,
}

impl<M: SwitchingModel<State = ColumnState>> ExactEmpc<M> {
    pub fn new(model: M, weights: EmpcWeights, config: ExactConfig) -> Self {
        Self {
            model,
            weights,
            config,
            cache: HashMap::new(),
            nodes_expanded: 0,
        }
    }
}

impl<M: SwitchingModel<State = ColumnState>> Controller for ExactEmpc<M> {
    fn name(&self) -> String {
        "empc-exact".into()
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<bool> {
        let key = solve_key(obs.state, obs.u_c);
        if let Some(&u) = self.cache.get(&key) {
            return Ok(u);
        }
        let sol = solve_exact(&self.model, obs.state, obs.u_c, &self.weights, &self.config)?;
        self.nodes_expanded += sol.nodes;
        self.cache.insert(key, sol.sequence[0]);
        Ok(sol.sequence[0])
    }
}

/// Applies the first binarized move of the sigmoid relaxation.
pub struct SigmoidEmpc<M> {
    pub model: M,
    pub weights: EmpcWeights,
    pub config: SigmoidConfig,
    cache: HashMap<Vec<u64>, bool>,
    /// Solves whose selected start hit the iteration cap.
    pub unconverged: usize,
}

impl<M: RelaxableModel<State = ColumnState>> SigmoidEmpc<M> {
    pub fn new(model: M, weights: EmpcWeights, config: SigmoidConfig) -> Self {
        Self {
            model,
            weights,
            config,
            cache: HashMap::new(),
            unconverged: 0,
        }
    }
}

impl<M: RelaxableModel<State = ColumnState>> Controller for SigmoidEmpc<M> {
    fn name(&self) -> String {
        "empc-sigmoid".into()
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<bool> {
        let key = solve_key(obs.state, obs.u_c);
        if let Some(&u) = self.cache.get(&key) {
            return Ok(u);
        }
        let sol = solve_sigmoid(&self.model, obs.state, obs.u_c, &self.weights, &self.config)?;
        if !sol.converged {
            log::warn!("sigmoid empc: step {} solve did not converge", obs.step);
            self.unconverged += 1;
        }
        self.cache.insert(key, sol.sequence[0]);
        Ok(sol.sequence[0])
    }
}
