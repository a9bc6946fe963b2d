//! Oracles shared by the integration tests.
#![allow(dead_code)]

use capture_core::empc::{EmpcWeights, SwitchingModel};
use capture_core::grm::ContinuousInput;

/// Brute force over all 2^N sequences, re-simulating each from scratch.
/// Ties go to the lexicographically largest sequence.
pub fn enumerate<M: SwitchingModel>(
    model: &M,
    state: &M::State,
    u_c: ContinuousInput,
    w: &EmpcWeights,
) -> (Vec<bool>, f64) {
    let n = w.horizon;
    let mut best = (Vec::new(), f64::INFINITY);
    for code in (0..1u64 << n).rev() {
        let seq: Vec<bool> = (0..n).map(|i| code >> (n - 1 - i) & 1 == 1).collect();
        let mut x = state.clone();
        let mut cost = 0.0;
        for &u in &seq {
            x = if u { model.reset(&x) } else { model.advance(&x, u_c).unwrap() };
            cost += w.w_s * model.outlet(&x) + if u { w.w_d } else { 0.0 };
        }
        if cost < best.1 {
            best = (seq, cost);
        }
    }
    best
}

/// Randomly initialised surrogate with normalization typical of loading data.
pub fn random_net(seed: u64, hidden: &[usize]) -> capture_core::surrogate::ReluNet {
    use capture_core::nn::{Activation, Mlp};
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![6];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    let mut net = capture_core::surrogate::ReluNet::from_mlp(Mlp::new(&sizes, Activation::Relu, &mut rng));
    net.input_mean = vec![5.0, 4.0, 50.0, 21.0, 40.0, 17.0];
    net.input_std = vec![10.0, 9.0, 6.0, 2.5, 20.0, 8.0];
    net.output_mean = 6.0;
    net.output_std = 10.0;
    net
}

use capture_core::grm::{outlet_concentration, Column, ColumnParams, ColumnState, StepConfig};

/// States visited under a constant input, starting from a fresh column.
pub fn open_loop(column: &Column, u: ContinuousInput, step: &StepConfig, steps: usize) -> Vec<ColumnState> {
    let mut x = column.zero_state();
    let mut out = vec![x.clone()];
    for _ in 0..steps {
        x = column.integrate_step(&x, u, step).unwrap();
        out.push(x.clone());
    }
    out
}

/// Largest derivative at the saturated state, relative to the largest state
/// entry.
pub fn saturation_residual(column: &Column, c_f: f64) -> f64 {
    let x = column.saturated_state(c_f);
    let d = column.rhs(&x, ContinuousInput::new(c_f, ContinuousInput::NOMINAL.q)).unwrap();
    let scale = x.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    d.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale
}

/// Relative mass-balance error over `minutes` of nominal loading with
/// adsorption switched off. Outflow uses the trapezoid rule on 2 min steps.
pub fn mass_balance_error(params: ColumnParams, minutes: f64) -> f64 {
    let c = Column::new(ColumnParams {
        k_1: 0.0,
        k_2: 0.0,
        ..params
    })
    .unwrap();
    let u = ContinuousInput::NOMINAL;
    let step = StepConfig {
        dt_macro: 2.0,
        n_substeps: 12,
        ..StepConfig::default()
    };
    let mut x = c.zero_state();
    let (mut inflow, mut outflow) = (0.0, 0.0);
    let mut y = outlet_concentration(&x);
    for _ in 0..(minutes / step.dt_macro).round() as usize {
        let next = c.integrate_step(&x, u, &step).unwrap();
        let y_next = outlet_concentration(&next);
        inflow += u.q * u.c_f * step.dt_macro;
        outflow += u.q * 0.5 * (y + y_next) * step.dt_macro;
        x = next;
        y = y_next;
    }
    let held = c.total_mab_inventory(&x, c.volume_litres());
    (held - (inflow - outflow)).abs() / inflow
}

fn outlet_run(column: &Column, substeps: usize, steps: usize) -> Vec<f64> {
    let step = StepConfig {
        n_substeps: substeps,
        ..StepConfig::default()
    };
    open_loop(column, ContinuousInput::NOMINAL, &step, steps)
        .iter()
        .map(outlet_concentration)
        .collect()
}

/// Substep-halving study at `substeps`, `2 substeps` and `4 substeps`.
/// Returns the largest outlet change on the first halving, relative to the
/// outlet value floored at 0.1% of the feed, and the ratio of the first to
/// the second change.
pub fn self_convergence(column: &Column, substeps: usize, steps: usize) -> (f64, f64) {
    let a = outlet_run(column, substeps, steps);
    let b = outlet_run(column, 2 * substeps, steps);
    let d = outlet_run(column, 4 * substeps, steps);
    let floor = 1e-3 * ContinuousInput::NOMINAL.c_f;
    let mut rel = 0.0f64;
    let (mut e1, mut e2) = (0.0f64, 0.0f64);
    for k in 0..a.len() {
        let diff = (a[k] - b[k]).abs();
        rel = rel.max(diff / b[k].max(floor));
        e1 = e1.max(diff);
        e2 = e2.max((b[k] - d[k]).abs());
    }
    (rel, e1 / e2)
}
