//! Predictors for the EMPC: the full column model and a cheap cascade.

use super::{RelaxableModel, SwitchingModel};
use crate::error::Result;
use crate::grm::{outlet_concentration, Column, ColumnState, ContinuousInput, StepConfig};

/// The full column model as predictor.
#[derive(Debug, Clone)]
pub struct GrmModel {
    pub column: Column,
    pub step: StepConfig,
}

impl GrmModel {
    pub fn new(column: Column, step: StepConfig) -> Self {
        Self { column, step }
    }
}

impl SwitchingModel for GrmModel {
    type State = ColumnState;

    fn advance(&self, state: &ColumnState, u_c: ContinuousInput) -> Result<ColumnState> {
        self.column.integrate_step(state, u_c, &self.step)
    }

    fn reset(&self, _state: &ColumnState) -> ColumnState {
        self.column.zero_state()
    }

    fn outlet(&self, state: &ColumnState) -> f64 {
        outlet_concentration(state)
    }
}

impl RelaxableModel for GrmModel {
    fn scale(&self, state: &ColumnState, factor: f64) -> ColumnState {
        state.scaled(factor)
    }
}

/// Cascade of saturating capture cells: a fast nonlinear stand-in for the
/// column with the same qualitative breakthrough.
///
/// The state holds the fractional loading of each cell followed by the
/// outlet concentration of the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeModel {
    pub cells: usize,
    /// Fraction of the incoming product an empty cell retains per step.
    pub capture: f64,
    /// Product mass (concentration x flow x step) that saturates one cell.
    pub capacity: f64,
}

impl Default for CascadeModel {
    fn default() -> Self {
        Self {
            cells: 6,
            capture: 0.9,
            capacity: 8_000.0,
        }
    }
}

impl CascadeModel {
    pub fn zero_state(&self) -> Vec<f64> {
        vec![0.0; self.cells + 1]
    }
}

impl SwitchingModel for CascadeModel {
    type State = Vec<f64>;

    fn advance(&self, state: &Vec<f64>, u_c: ContinuousInput) -> Result<Vec<f64>> {
        let mut next = state.clone();
        let mut c = u_c.c_f;
        for load in next.iter_mut().take(self.cells) {
            let retained = self.capture * (1.0 - *load) * c;
            *load = (*load + retained * u_c.q / self.capacity).min(1.0);
            c -= retained;
        }
        next[self.cells] = c;
        Ok(next)
    }

    fn reset(&self, _state: &Vec<f64>) -> Vec<f64> {
        self.zero_state()
    }

    fn outlet(&self, state: &Vec<f64>) -> f64 {
        state[self.cells]
    }
}

impl RelaxableModel for CascadeModel {
    fn scale(&self, state: &Vec<f64>, factor: f64) -> Vec<f64> {
        state.iter().map(|v| v * factor).collect()
    }
}
