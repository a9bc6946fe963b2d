//! Exact binary EMPC by depth-first branch-and-bound.
//!
//! Every predicted state is either the root advanced `a` steps or the
//! post-switch state advanced `a` steps, so one solve needs only two chains
//! of model evaluations. Costs-to-go of both chains are tabulated by dynamic
//! programming and serve as the lower bound; the search then only expands
//! nodes that can still match the incumbent up to rounding. Among equal-cost
//! sequences the lexicographically largest (earliest switch) is returned.

use super::{stage_cost, EmpcWeights, SwitchingModel};
use crate::error::{Error, Result};
use crate::grm::ContinuousInput;

/// Default cap on node expansions per solve.
pub const DEFAULT_NODE_BUDGET: u64 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactConfig {
    pub node_budget: u64,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self {
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub sequence: Vec<bool>,
    /// Horizon cost, summed stage by stage in sequence order.
    pub cost: f64,
    /// Nodes expanded by the search.
    pub nodes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Root,
    Reset,
}

struct Search<'a> {
    w: &'a EmpcWeights,
    n: usize,
    /// Outlet of the root advanced `a` steps, `a = 0..=n`.
    root_out: Vec<f64>,
    /// Outlet of the post-switch state advanced `a` steps, `a = 0..n`.
    reset_out: Vec<f64>,
    /// Optimal cost-to-go from stage `j` for the root chain (age `j`).
    root_togo: Vec<f64>,
    /// `reset_togo[j][a]`: optimal cost-to-go from stage `j` at reset age `a`.
    reset_togo: Vec<Vec<f64>>,
    seq: Vec<bool>,
    best_seq: Vec<bool>,
    best_cost: f64,
    nodes: u64,
    budget: u64,
}

impl Search<'_> {
    fn tabulate(&mut self) {
        let (n, w) = (self.n, self.w);
        self.root_togo = vec![0.0; n + 1];
        self.reset_togo = vec![vec![f64::INFINITY; n + 1]; n + 1];
        self.reset_togo[n].iter_mut().for_each(|v| *v = 0.0);
        for j in (0..n).rev() {
            let switch = stage_cost(self.reset_out[0], true, w) + self.reset_togo[j + 1][0];
            // Reset-origin states at stage j have age < j.
            for a in 0..j {
                let hold = stage_cost(self.reset_out[a + 1], false, w) + self.reset_togo[j + 1][a + 1];
                self.reset_togo[j][a] = switch.min(hold);
            }
            let hold = stage_cost(self.root_out[j + 1], false, w) + self.root_togo[j + 1];
            self.root_togo[j] = switch.min(hold);
        }
    }

    fn togo(&self, origin: Origin, age: usize, stage: usize) -> f64 {
        match origin {
            Origin::Root => self.root_togo[stage],
            Origin::Reset => self.reset_togo[stage][age],
        }
    }

    fn child(&self, origin: Origin, age: usize, u: bool) -> (Origin, usize, f64) {
        match (u, origin) {
            (true, _) => (Origin::Reset, 0, self.reset_out[0]),
            (false, Origin::Root) => (Origin::Root, age + 1, self.root_out[age + 1]),
            (false, Origin::Reset) => (Origin::Reset, age + 1, self.reset_out[age + 1]),
        }
    }

    /// Follow the tabulated argmin to seed the incumbent.
    fn greedy(&mut self) {
        let (mut origin, mut age) = (Origin::Root, 0);
        let mut cost = 0.0;
        let mut seq = Vec::with_capacity(self.n);
        for j in 0..self.n {
            let value = |u: bool| {
                let (o, a, out) = self.child(origin, age, u);
                stage_cost(out, u, self.w) + self.togo(o, a, j + 1)
            };
            let u = value(true) <= value(false);
            let (o, a, out) = self.child(origin, age, u);
            cost += stage_cost(out, u, self.w);
            seq.push(u);
            origin = o;
            age = a;
        }
        self.best_cost = cost;
        self.best_seq = seq;
    }

    fn visit(&mut self, stage: usize, origin: Origin, age: usize, partial: f64) -> Result<()> {
        if stage == self.n {
            if partial < self.best_cost || (partial == self.best_cost && self.seq > self.best_seq) {
                self.best_cost = partial;
                self.best_seq.clone_from(&self.seq);
            }
            return Ok(());
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(Error::BudgetExceeded {
                budget: self.budget,
                horizon: self.n,
            });
        }
        for u in [true, false] {
            let (o, a, out) = self.child(origin, age, u);
            let p = partial + stage_cost(out, u, self.w);
            let bound = p + self.togo(o, a, stage + 1);
            // The tabulated bound and the running sum round differently.
            let margin = 1e-9 * (1.0 + bound.abs());
            if bound - margin > self.best_cost {
                continue;
            }
            self.seq[stage] = u;
            self.visit(stage + 1, o, a, p)?;
        }
        Ok(())
    }
}

/// Globally optimal switching sequence over the horizon `w.horizon`.
///
/// Fails with [`Error::BudgetExceeded`] rather than returning a possibly
/// suboptimal sequence.
pub fn solve_exact<M: SwitchingModel>(
    model: &M,
    state: &M::State,
    u_c: ContinuousInput,
    w: &EmpcWeights,
    cfg: &ExactConfig,
) -> Result<ExactSolution> {
    w.validate()?;
    let n = w.horizon;
    let mut root_out = Vec::with_capacity(n + 1);
    let mut x = state.clone();
    root_out.push(model.outlet(&x));
    for _ in 0..n {
        x = model.advance(&x, u_c)?;
        root_out.push(model.outlet(&x));
    }
    let mut reset_out = Vec::with_capacity(n);
    let mut x = model.reset(state);
    reset_out.push(model.outlet(&x));
    for _ in 1..n {
        x = model.advance(&x, u_c)?;
        reset_out.push(model.outlet(&x));
    }

    let mut search = Search {
        w,
        n,
        root_out,
        reset_out,
        root_togo: Vec::new(),
        reset_togo: Vec::new(),
        seq: vec![false; n],
        best_seq: Vec::new(),
        best_cost: f64::INFINITY,
        nodes: 0,
        budget: cfg.node_budget,
    };
    search.tabulate();
    search.greedy();
    search.visit(0, Origin::Root, 0, 0.0)?;
    log::debug!(
        "exact empc: N={n} nodes={} cost={:.6e} first={}",
        search.nodes,
        search.best_cost,
        u8::from(search.best_seq[0])
    );
    Ok(ExactSolution {
        sequence: search.best_seq,
        cost: search.best_cost,
        nodes: search.nodes,
    })
}
