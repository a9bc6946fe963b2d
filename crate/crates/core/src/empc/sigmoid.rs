//! Sigmoid relaxation of the binary EMPC.
//!
//! Each stage gets a continuous variable `r_i` in `[r_min, r_max]`; the
//! switch is replaced by `sigma(r_i)` in the cost and by the soft reset
//! `x_{i+1} = f(x_i) * (1 - sigma(r_i))` in the dynamics. The relaxed cost is
//! minimized by projected BFGS with central finite-difference gradients from
//! several starts, then thresholded back to a binary sequence.

use std::cell::Cell;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sequence_cost, EmpcWeights, RelaxableModel};
use crate::error::{invalid, Result};
use crate::grm::ContinuousInput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SigmoidConfig {
    pub beta: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// `sigma(r) >= threshold` binarizes to a switch.
    pub threshold: f64,
    /// Number of starts: both box corners, then Latin-hypercube samples.
    pub starts: usize,
    pub max_iter: usize,
    pub fd_step: f64,
    /// Stop when the projected gradient falls below this (infinity norm).
    pub grad_tol: f64,
    /// Stop when an iteration improves the cost by less than this, relative.
    pub cost_tol: f64,
    /// Half-width of the interval around 0 from which interior starts are
    /// sampled. Far from 0 the sigmoid is flat and gradients vanish.
    pub interior_band: f64,
    pub seed: u64,
}

impl Default for SigmoidConfig {
    fn default() -> Self {
        Self {
            beta: 15.0,
            r_min: -10.0,
            r_max: 10.0,
            threshold: 0.5,
            starts: 8,
            max_iter: 60,
            fd_step: 1e-4,
            grad_tol: 1e-7,
            cost_tol: 1e-10,
            interior_band: 0.5,
            seed: 0,
        }
    }
}

impl SigmoidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min < self.r_max) {
            return Err(invalid("sigmoid.r_min", "must be below r_max"));
        }
        if !(self.beta > 0.0) {
            return Err(invalid("sigmoid.beta", "must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid("sigmoid.threshold", "must lie in (0, 1)"));
        }
        if self.starts == 0 {
            return Err(invalid("sigmoid.starts", "need at least one start"));
        }
        if !(self.fd_step > 0.0) {
            return Err(invalid("sigmoid.fd_step", "must be positive"));
        }
        if !(self.interior_band > 0.0) {
            return Err(invalid("sigmoid.interior_band", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidSolution {
    pub r: Vec<f64>,
    pub sequence: Vec<bool>,
    pub relaxed_cost: f64,
    /// Integer horizon cost of `sequence`.
    pub binarized_cost: f64,
    /// Whether the selected start met a stopping tolerance.
    pub converged: bool,
    pub starts_converged: usize,
    /// Model steps spent on the solve.
    pub model_steps: u64,
}

/// Logistic function `1 / (1 + exp(-beta r))`.
#[inline]
pub fn sigmoid(r: f64, beta: f64) -> f64 {
    1.0 / (1.0 + (-beta * r).exp())
}

struct Relaxed<'a, M: RelaxableModel> {
    model: &'a M,
    state: &'a M::State,
    u_c: ContinuousInput,
    w: &'a EmpcWeights,
    beta: f64,
    steps: Cell<u64>,
}

/// A rollout kept for cheap coordinate perturbations.
struct Rollout<S> {
    /// `f(x_i)`, the unswitched prediction from each stage.
    free_next: Vec<S>,
    /// Cost of stages before `i`.
    prefix: Vec<f64>,
    cost: f64,
}

impl<M: RelaxableModel> Relaxed<'_, M> {
    fn advance(&self, x: &M::State) -> Result<M::State> {
        self.steps.set(self.steps.get() + 1);
        self.model.advance(x, self.u_c)
    }

    fn stage(&self, free: &M::State, r: f64) -> (M::State, f64) {
        let s = sigmoid(r, self.beta);
        let next = self.model.scale(free, 1.0 - s);
        let cost = self.w.w_s * self.model.outlet(&next) + self.w.w_d * s;
        (next, cost)
    }

    fn rollout(&self, r: &[f64]) -> Result<Rollout<M::State>> {
        let mut free_next = Vec::with_capacity(r.len());
        let mut prefix = Vec::with_capacity(r.len());
        let mut x = self.state.clone();
        let mut cost = 0.0;
        for &ri in r {
            let free = self.advance(&x)?;
            prefix.push(cost);
            let (next, c) = self.stage(&free, ri);
            cost += c;
            free_next.push(free);
            x = next;
        }
        Ok(Rollout {
            free_next,
            prefix,
            cost,
        })
    }

    /// Cost with `r[i]` replaced by `value`, reusing the stages before `i`.
    fn perturbed(&self, base: &Rollout<M::State>, r: &[f64], i: usize, value: f64) -> Result<f64> {
        if sigmoid(value, self.beta) == sigmoid(r[i], self.beta) {
            return Ok(base.cost);
        }
        let (mut x, c) = self.stage(&base.free_next[i], value);
        let mut cost = base.prefix[i] + c;
        for &rj in &r[i + 1..] {
            let free = self.advance(&x)?;
            let (next, c) = self.stage(&free, rj);
            cost += c;
            x = next;
        }
        Ok(cost)
    }

    fn gradient(
        &self,
        base: &Rollout<M::State>,
        r: &[f64],
        cfg: &SigmoidConfig,
    ) -> Result<Vec<f64>> {
        let mut g = vec![0.0; r.len()];
        for i in 0..r.len() {
            let lo = (r[i] - cfg.fd_step).max(cfg.r_min);
            let hi = (r[i] + cfg.fd_step).min(cfg.r_max);
            let f_lo = self.perturbed(base, r, i, lo)?;
            let f_hi = self.perturbed(base, r, i, hi)?;
            g[i] = (f_hi - f_lo) / (hi - lo);
        }
        Ok(g)
    }
}

struct LocalResult {
    r: Vec<f64>,
    cost: f64,
    converged: bool,
}

fn project(x: &mut [f64], lo: f64, hi: f64) {
    x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_active(x: f64, g: f64, lo: f64, hi: f64) -> bool {
    (x <= lo && g > 0.0) || (x >= hi && g < 0.0)
}

/// Projected BFGS from one start.
fn minimize_from<M: RelaxableModel>(
    problem: &Relaxed<'_, M>,
    start: Vec<f64>,
    cfg: &SigmoidConfig,
) -> Result<LocalResult> {
    let n = start.len();
    let (lo, hi) = (cfg.r_min, cfg.r_max);
    let mut x = start;
    let mut roll = problem.rollout(&x)?;
    let mut g = problem.gradient(&roll, &x, cfg)?;
    let mut h = identity(n);
    let mut active: Vec<bool> = (0..n).map(|i| is_active(x[i], g[i], lo, hi)).collect();

    for _ in 0..cfg.max_iter {
        let pg = (0..n)
            .map(|i| (x[i] - (x[i] - g[i]).clamp(lo, hi)).abs())
            .fold(0.0, f64::max);
        if pg <= cfg.grad_tol {
            return Ok(LocalResult {
                r: x,
                cost: roll.cost,
                converged: true,
            });
        }

        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| !active[i]) {
            d[i] = -(0..n).filter(|&j| !active[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>();
        }
        if dot(&d, &g) >= 0.0 {
            h = identity(n);
            for i in 0..n {
                d[i] = if active[i] { 0.0 } else { -g[i] };
            }
        }
        // Cap the first trial step at the box width.
        let d_max = d.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        let mut t = if d_max > 0.0 { (1.0f64).min((hi - lo) / d_max) } else { 0.0 };

        let mut accepted = None;
        for _ in 0..40 {
            if t == 0.0 {
                break;
            }
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            project(&mut trial, lo, hi);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let roll_t = problem.rollout(&trial)?;
            if roll_t.cost <= roll.cost + 1e-4 * dot(&g, &step) {
                accepted = Some((trial, step, roll_t));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, s, roll_new)) = accepted else {
            // No descent along the projected direction at rounding level.
            return Ok(LocalResult {
                r: x,
                cost: roll.cost,
                converged: true,
            });
        };
        let g_new = problem.gradient(&roll_new, &x_new, cfg)?;
        let improvement = roll.cost - roll_new.cost;
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let new_active: Vec<bool> = (0..n).map(|i| is_active(x_new[i], g_new[i], lo, hi)).collect();
        if new_active != active {
            h = identity(n);
        } else if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            bfgs_update(&mut h, &s, &y, sy);
        }
        x = x_new;
        g = g_new;
        roll = roll_new;
        active = new_active;
        if improvement <= cfg.cost_tol * (1.0 + roll.cost.abs()) {
            return Ok(LocalResult {
                r: x,
                cost: roll.cost,
                converged: true,
            });
        }
    }
    Ok(LocalResult {
        r: x,
        cost: roll.cost,
        converged: false,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    (0..n).for_each(|i| h[i * n + i] = 1.0);
    h
}

/// Inverse-Hessian BFGS update.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn starting_points(n: usize, cfg: &SigmoidConfig) -> Vec<Vec<f64>> {
    let mut starts = vec![vec![cfg.r_max; n], vec![cfg.r_min; n]];
    let interior = cfg.starts.saturating_sub(2);
    if interior > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let band = cfg.interior_band.min((cfg.r_max - cfg.r_min) / 2.0);
        let centre = 0.0f64.clamp(cfg.r_min + band, cfg.r_max - band);
        let mut samples = vec![vec![0.0; n]; interior];
        for dim in 0..n {
            let mut strata: Vec<usize> = (0..interior).collect();
            strata.shuffle(&mut rng);
            for (k, &stratum) in strata.iter().enumerate() {
                let u = (stratum as f64 + rng.random::<f64>()) / interior as f64;
                samples[k][dim] = centre - band + 2.0 * band * u;
            }
        }
        starts.extend(samples);
    }
    starts.truncate(cfg.starts);
    starts
}

/// Minimize the relaxed horizon cost and binarize the best local solution.
pub fn solve_sigmoid<M: RelaxableModel>(
    model: &M,
    state: &M::State,
    u_c: ContinuousInput,
    w: &EmpcWeights,
    cfg: &SigmoidConfig,
) -> Result<SigmoidSolution> {
    w.validate()?;
    cfg.validate()?;
    let problem = Relaxed {
        model,
        state,
        u_c,
        w,
        beta: cfg.beta,
        steps: Cell::new(0),
    };
    let mut best: Option<LocalResult> = None;
    let mut starts_converged = 0;
    for start in starting_points(w.horizon, cfg) {
        let local = minimize_from(&problem, start, cfg)?;
        starts_converged += usize::from(local.converged);
        if best.as_ref().is_none_or(|b| local.cost < b.cost) {
            best = Some(local);
        }
    }
    let best = best.expect("at least one start");
    let sequence: Vec<bool> = best
        .r
        .iter()
        .map(|&r| sigmoid(r, cfg.beta) >= cfg.threshold)
        .collect();
    let binarized_cost = sequence_cost(model, state, u_c, &sequence, w)?;
    let model_steps = problem.steps.get() + w.horizon as u64;
    log::debug!(
        "sigmoid empc: N={} starts converged {starts_converged}/{} relaxed={:.6e} binarized={:.6e} steps={model_steps}",
        w.horizon,
        cfg.starts,
        best.cost,
        binarized_cost
    );
    Ok(SigmoidSolution {
        r: best.r,
        sequence,
        relaxed_cost: best.cost,
        binarized_cost,
        converged: best.converged,
        starts_converged,
        model_steps,
    })
}
