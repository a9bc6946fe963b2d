//! Interval bounds and the big-M mixed-integer encoding of the surrogate EMPC.
//!
//! Each hidden neuron `z = max(a, 0)` with pre-activation `a = W z_prev + b`
//! and bounds `m_lo <= a <= m_hi` becomes four rows with a binary `t`:
//!
//! ```text
//! z >= a,   z <= a - m_lo (1 - t),   z >= 0,   z <= m_hi t
//! ```
//!
//! Input normalization is folded into the first layer and the output scaling
//! into the output row, so the encoding is in physical units. The horizon
//! chains one network block per stage through the reset coupling
//! `y_{s+1} = yhat_s (1 - u_s)` and the lag restart, both linearized with
//! big-M rows. The encoding is exact while predictions stay inside the
//! declared input box.

use std::io::Write;

use rand::Rng;

use super::{History, ReluNet};
use crate::empc::EmpcWeights;
use crate::error::{invalid, Error, Result};
use crate::grm::ContinuousInput;

/// Axis-aligned box of network inputs in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(invalid("input_box", "bounds must be finite with lo <= hi"));
        }
        Ok(Self { lo, hi })
    }

    /// Box covering closed-loop operation: outlet up to `y_max`, inputs up to
    /// `1 + spread` times nominal, previous inputs down to zero (fresh window).
    pub fn operating(y_max: f64, nominal: ContinuousInput, spread: f64) -> Self {
        let (cf, q) = (nominal.c_f * (1.0 + spread), nominal.q * (1.0 + spread));
        let (cf_lo, q_lo) = (nominal.c_f * (1.0 - spread), nominal.q * (1.0 - spread));
        Self {
            lo: vec![0.0, 0.0, cf_lo.max(0.0), q_lo.max(0.0), 0.0, 0.0],
            hi: vec![y_max, y_max, cf, q, cf, q],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if l == h { l } else { rng.random_range(l..=h) })
            .collect()
    }
}

/// Pre-activation bounds of every layer over an input box. The last layer is
/// the (normalized) network output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub input_box: InputBox,
    pub lo: Vec<Vec<f64>>,
    pub hi: Vec<Vec<f64>>,
}

impl LayerBounds {
    /// Output bounds in physical units, before clamping.
    pub fn output_range(&self, net: &ReluNet) -> (f64, f64) {
        let (lo, hi) = (self.lo.last().expect("layers")[0], self.hi.last().expect("layers")[0]);
        (net.output_mean + net.output_std * lo, net.output_mean + net.output_std * hi)
    }
}

/// Interval propagation: positive weights carry the matching bound, negative
/// weights the opposite one.
pub fn propagate_bounds(net: &ReluNet, input_box: &InputBox) -> Result<LayerBounds> {
    if input_box.dim() != net.mlp.n_inputs() {
        return Err(Error::Dimension {
            expected: net.mlp.n_inputs(),
            got: input_box.dim(),
        });
    }
    // Normalization is increasing, so the box maps to a box.
    let mut a_lo = net.normalize(&input_box.lo);
    let mut a_hi = net.normalize(&input_box.hi);
    let mut lo_all = Vec::with_capacity(net.mlp.layers.len());
    let mut hi_all = Vec::with_capacity(net.mlp.layers.len());
    let last = net.mlp.layers.len() - 1;
    for (l, layer) in net.mlp.layers.iter().enumerate() {
        let mut lo = layer.bias.clone();
        let mut hi = layer.bias.clone();
        for o in 0..layer.n_out {
            for i in 0..layer.n_in {
                let w = layer.weight(o, i);
                if w >= 0.0 {
                    lo[o] += w * a_lo[i];
                    hi[o] += w * a_hi[i];
                } else {
                    lo[o] += w * a_hi[i];
                    hi[o] += w * a_lo[i];
                }
            }
        }
        for neuron in 0..layer.n_out {
            if !(lo[neuron].is_finite() && hi[neuron].is_finite()) {
                return Err(Error::UnboundedNeuron { layer: l, neuron });
            }
        }
        if l < last {
            a_lo = lo.iter().map(|v| v.max(0.0)).collect();
            a_hi = hi.iter().map(|v| v.max(0.0)).collect();
        }
        lo_all.push(lo);
        hi_all.push(hi);
    }
    Ok(LayerBounds {
        input_box: input_box.clone(),
        lo: lo_all,
        hi: hi_all,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub binary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// Role of a row; the four hidden-neuron rows carry the neuron position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `z >= a`
    ReluLower { stage: usize, layer: usize, neuron: usize },
    /// `z <= a - m_lo (1 - t)`
    ReluGate { stage: usize, layer: usize, neuron: usize },
    /// `z >= 0`
    ReluNonnegative { stage: usize, layer: usize, neuron: usize },
    /// `z <= m_hi t`
    ReluActive { stage: usize, layer: usize, neuron: usize },
    /// Affine output row.
    Output { stage: usize },
    /// Clamp of the output at zero.
    OutputClamp { stage: usize },
    /// Switch coupling of the next outlet and the lag window.
    Reset { stage: usize },
}

impl ConstraintKind {
    pub fn is_hidden(&self) -> bool {
        matches!(
            self,
            Self::ReluLower { .. } | Self::ReluGate { .. } | Self::ReluNonnegative { .. } | Self::ReluActive { .. }
        )
    }

    pub fn stage(&self) -> usize {
        match *self {
            Self::ReluLower { stage, .. }
            | Self::ReluGate { stage, .. }
            | Self::ReluNonnegative { stage, .. }
            | Self::ReluActive { stage, .. }
            | Self::Output { stage }
            | Self::OutputClamp { stage }
            | Self::Reset { stage } => stage,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub kind: ConstraintKind,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v]).sum()
    }

    /// Whether the row holds at `x` within `tol`, scaled by the row magnitude.
    pub fn satisfied(&self, x: &[f64], tol: f64) -> bool {
        let lhs = self.lhs(x);
        let scale = 1.0 + self.rhs.abs() + self.terms.iter().map(|&(v, c)| (c * x[v]).abs()).sum::<f64>();
        let slack = tol * scale;
        match self.sense {
            Sense::Le => lhs <= self.rhs + slack,
            Sense::Ge => lhs >= self.rhs - slack,
            Sense::Eq => (lhs - self.rhs).abs() <= slack,
        }
    }
}

/// Variable indices of one network evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub inputs: Vec<usize>,
    pub hidden: Vec<Vec<usize>>,
    pub binaries: Vec<Vec<usize>>,
    pub output: usize,
    pub clamped: usize,
    pub clamp_binary: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpEncoding {
    pub variables: Vec<Variable>,
    pub constraints: Vec<LinearConstraint>,
    /// Minimized linear objective.
    pub objective: Vec<(usize, f64)>,
    pub blocks: Vec<Block>,
    /// Switch binaries, one per stage.
    pub switches: Vec<usize>,
}

struct Builder {
    enc: MilpEncoding,
}

impl Builder {
    fn var(&mut self, name: String, lower: f64, upper: f64, binary: bool) -> usize {
        self.enc.variables.push(Variable {
            name,
            lower,
            upper,
            binary,
        });
        self.enc.variables.len() - 1
    }

    fn row(&mut self, kind: ConstraintKind, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        let name = format!("c{}", self.enc.constraints.len());
        self.enc.constraints.push(LinearConstraint {
            name,
            kind,
            terms,
            sense,
            rhs,
        });
    }

    /// Rows of one network evaluation on the given input variables.
    fn network(&mut self, net: &ReluNet, bounds: &LayerBounds, stage: usize, inputs: Vec<usize>) -> Block {
        let layers = &net.mlp.layers;
        let last = layers.len() - 1;
        let mut prev = inputs.clone();
        let mut hidden = Vec::with_capacity(last);
        let mut binaries = Vec::with_capacity(last);
        for (l, layer) in layers[..last].iter().enumerate() {
            let mut zs = Vec::with_capacity(layer.n_out);
            let mut ts = Vec::with_capacity(layer.n_out);
            for j in 0..layer.n_out {
                let (m_lo, m_hi) = (bounds.lo[l][j], bounds.hi[l][j]);
                let z = self.var(format!("z{stage}_{l}_{j}"), 0.0, m_hi.max(0.0), false);
                let t = self.var(format!("t{stage}_{l}_{j}"), 0.0, 1.0, true);
                let (affine, bias) = folded_row(net, l, j, &prev);
                let pos = ConstraintKind::ReluLower { stage, layer: l, neuron: j };
                let mut terms = vec![(z, 1.0)];
                terms.extend(affine.iter().map(|&(v, c)| (v, -c)));
                self.row(pos, terms.clone(), Sense::Ge, bias);
                let mut gate = terms;
                gate.push((t, -m_lo));
                self.row(ConstraintKind::ReluGate { stage, layer: l, neuron: j }, gate, Sense::Le, bias - m_lo);
                self.row(
                    ConstraintKind::ReluNonnegative { stage, layer: l, neuron: j },
                    vec![(z, 1.0)],
                    Sense::Ge,
                    0.0,
                );
                self.row(
                    ConstraintKind::ReluActive { stage, layer: l, neuron: j },
                    vec![(z, 1.0), (t, -m_hi)],
                    Sense::Le,
                    0.0,
                );
                zs.push(z);
                ts.push(t);
            }
            prev = zs.clone();
            hidden.push(zs);
            binaries.push(ts);
        }

        let (o_lo, o_hi) = bounds.output_range(net);
        let output = self.var(format!("o{stage}"), o_lo, o_hi, false);
        let (affine, bias) = folded_row(net, last, 0, &prev);
        let mut terms = vec![(output, 1.0)];
        terms.extend(affine.iter().map(|&(v, c)| (v, -c)));
        self.row(ConstraintKind::Output { stage }, terms, Sense::Eq, bias);

        let clamped = self.var(format!("yh{stage}"), 0.0, o_hi.max(0.0), false);
        let clamp_binary = self.var(format!("to{stage}"), 0.0, 1.0, true);
        let kind = ConstraintKind::OutputClamp { stage };
        self.row(kind, vec![(clamped, 1.0), (output, -1.0)], Sense::Ge, 0.0);
        self.row(kind, vec![(clamped, 1.0), (output, -1.0), (clamp_binary, -o_lo)], Sense::Le, -o_lo);
        self.row(kind, vec![(clamped, 1.0)], Sense::Ge, 0.0);
        self.row(kind, vec![(clamped, 1.0), (clamp_binary, -o_hi.max(0.0))], Sense::Le, 0.0);

        Block {
            inputs,
            hidden,
            binaries,
            output,
            clamped,
            clamp_binary,
        }
    }
}

/// Row `l, j` of the network in physical units: coefficients on `prev` and
/// the constant term. The first layer absorbs the input normalization and the
/// output layer the output scaling.
fn folded_row(net: &ReluNet, l: usize, j: usize, prev: &[usize]) -> (Vec<(usize, f64)>, f64) {
    let layer = &net.mlp.layers[l];
    let last = net.mlp.layers.len() - 1;
    let mut bias = layer.bias[j];
    let mut terms = Vec::with_capacity(layer.n_in);
    for (i, &v) in prev.iter().enumerate() {
        let mut c = layer.weight(j, i);
        if l == 0 {
            bias -= c * net.input_mean[i] / net.input_std[i];
            c /= net.input_std[i];
        }
        if c != 0.0 {
            terms.push((v, c));
        }
    }
    if l == last {
        terms.iter_mut().for_each(|(_, c)| *c *= net.output_std);
        bias = net.output_mean + net.output_std * bias;
    }
    (terms, bias)
}

/// Mixed-integer encoding of the surrogate EMPC from `history` with inputs
/// held at `u_c`.
pub fn encode_milp(
    net: &ReluNet,
    bounds: &LayerBounds,
    w: &EmpcWeights,
    history: History,
    u_c: ContinuousInput,
) -> Result<MilpEncoding> {
    w.validate()?;
    let dims = net.mlp.n_inputs();
    if dims != super::N_FEATURES {
        return Err(Error::Dimension {
            expected: super::N_FEATURES,
            got: dims,
        });
    }
    for (l, (lo, hi)) in bounds.lo.iter().zip(&bounds.hi).enumerate() {
        if let Some(neuron) = lo.iter().zip(hi).position(|(a, b)| !(a.is_finite() && b.is_finite())) {
            return Err(Error::UnboundedNeuron { layer: l, neuron });
        }
    }
    let bx = &bounds.input_box;
    let y_max = bx.hi[0].min(bx.hi[1]);
    let mut b = Builder {
        enc: MilpEncoding {
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            blocks: Vec::new(),
            switches: Vec::new(),
        },
    };
    let cf = b.var("cF".into(), u_c.c_f, u_c.c_f, false);
    let q = b.var("Q".into(), u_c.q, u_c.q, false);
    let mut y = b.var("y0".into(), history.y, history.y, false);
    let mut p = b.var("p0".into(), history.y_prev, history.y_prev, false);
    let mut cfp = b.var("cFp0".into(), history.u_prev.c_f, history.u_prev.c_f, false);
    let mut qp = b.var("Qp0".into(), history.u_prev.q, history.u_prev.q, false);

    for s in 0..w.horizon {
        let block = b.network(net, bounds, s, vec![y, p, cf, q, cfp, qp]);
        let u = b.var(format!("u{s}"), 0.0, 1.0, true);
        let y_next = b.var(format!("y{}", s + 1), 0.0, y_max, false);
        let p_next = b.var(format!("p{}", s + 1), 0.0, y_max, false);
        let cfp_next = b.var(format!("cFp{}", s + 1), 0.0, u_c.c_f, false);
        let qp_next = b.var(format!("Qp{}", s + 1), 0.0, u_c.q, false);
        let m_y = b.enc.variables[block.clamped].upper;
        let kind = ConstraintKind::Reset { stage: s };
        let yh = block.clamped;
        // y_{s+1} = yhat_s (1 - u_s)
        b.row(kind, vec![(y_next, 1.0), (yh, -1.0)], Sense::Le, 0.0);
        b.row(kind, vec![(y_next, 1.0), (yh, -1.0), (u, m_y)], Sense::Ge, 0.0);
        b.row(kind, vec![(y_next, 1.0), (u, m_y)], Sense::Le, m_y);
        // p_{s+1} = y_s (1 - u_s)
        b.row(kind, vec![(p_next, 1.0), (y, -1.0)], Sense::Le, 0.0);
        b.row(kind, vec![(p_next, 1.0), (y, -1.0), (u, y_max)], Sense::Ge, 0.0);
        b.row(kind, vec![(p_next, 1.0), (u, y_max)], Sense::Le, y_max);
        // previous inputs restart at zero after a switch
        b.row(kind, vec![(cfp_next, 1.0), (u, u_c.c_f)], Sense::Eq, u_c.c_f);
        b.row(kind, vec![(qp_next, 1.0), (u, u_c.q)], Sense::Eq, u_c.q);

        b.enc.objective.push((y_next, w.w_s));
        b.enc.objective.push((u, w.w_d));
        b.enc.blocks.push(block);
        b.enc.switches.push(u);
        (y, p, cfp, qp) = (y_next, p_next, cfp_next, qp_next);
    }
    Ok(b.enc)
}

impl MilpEncoding {
    pub fn hidden_constraints(&self, stage: usize) -> usize {
        self.constraints
            .iter()
            .filter(|c| c.kind.is_hidden() && c.kind.stage() == stage)
            .count()
    }

    pub fn binaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.variables.iter().enumerate().filter(|(_, v)| v.binary).map(|(i, _)| i)
    }

    /// Index of the first row of the given kind.
    pub fn find(&self, kind: ConstraintKind) -> Option<usize> {
        self.constraints.iter().position(|c| c.kind == kind)
    }

    /// Write the encoding in CPLEX LP format.
    pub fn write_lp<W: Write>(&self, mut out: W) -> Result<()> {
        let name = |v: usize| &self.variables[v].name;
        let terms = |ts: &[(usize, f64)]| {
            ts.iter()
                .map(|&(v, c)| {
                    if c < 0.0 {
                        format!(" - {} {}", -c, name(v))
                    } else {
                        format!(" + {} {}", c, name(v))
                    }
                })
                .collect::<String>()
        };
        writeln!(out, "\\ ReLU surrogate EMPC, {} stages", self.blocks.len())?;
        writeln!(out, "Minimize")?;
        writeln!(out, " obj:{}", terms(&self.objective))?;
        writeln!(out, "Subject To")?;
        for c in &self.constraints {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            writeln!(out, " {}:{} {} {}", c.name, terms(&c.terms), op, c.rhs)?;
        }
        writeln!(out, "Bounds")?;
        for v in self.variables.iter().filter(|v| !v.binary) {
            if v.lower == v.upper {
                writeln!(out, " {} = {}", v.name, v.lower)?;
            } else {
                writeln!(out, " {} <= {} <= {}", v.lower, v.name, v.upper)?;
            }
        }
        writeln!(out, "Binaries")?;
        for v in self.variables.iter().filter(|v| v.binary) {
            writeln!(out, " {}", v.name)?;
        }
        writeln!(out, "End")?;
        Ok(())
    }
}

/// Outcome of [`verify_encoding`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub samples: usize,
    pub feasible: usize,
    pub pinned: usize,
    pub passed: usize,
    /// Descriptions of the first few failures.
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.samples
    }
}

/// Check the first network block of `enc` against forward passes of `net`.
///
/// For each input sample the forward-pass values and activation pattern are
/// assigned to the block; the sample passes when (a) every row of the block
/// holds and (b) with inputs and binaries fixed, the rows leave each
/// continuous block variable an interval of width at most 1e-6 containing its
/// forward value.
pub fn verify_encoding(enc: &MilpEncoding, net: &ReluNet, samples: &[Vec<f64>]) -> VerifyReport {
    const FEAS_TOL: f64 = 1e-9;
    const PIN_TOL: f64 = 1e-6;
    let mut report = VerifyReport {
        samples: samples.len(),
        ..VerifyReport::default()
    };
    let Some(block) = enc.blocks.first() else {
        report.feasible = samples.len();
        report.pinned = samples.len();
        report.passed = samples.len();
        return report;
    };
    let rows: Vec<&LinearConstraint> = enc
        .constraints
        .iter()
        .filter(|c| c.kind.stage() == 0 && !matches!(c.kind, ConstraintKind::Reset { .. }))
        .collect();
    let mut continuous: Vec<usize> = block.hidden.iter().flatten().copied().collect();
    continuous.push(block.output);
    continuous.push(block.clamped);

    for (k, sample) in samples.iter().enumerate() {
        let mut x = vec![0.0; enc.variables.len()];
        for (&v, &value) in block.inputs.iter().zip(sample) {
            x[v] = value;
        }
        let pre = net.mlp.pre_activations(&net.normalize(sample));
        for (l, zs) in block.hidden.iter().enumerate() {
            for (j, &z) in zs.iter().enumerate() {
                x[z] = pre[l][j].max(0.0);
                x[block.binaries[l][j]] = if pre[l][j] > 0.0 { 1.0 } else { 0.0 };
            }
        }
        let out = net.output_mean + net.output_std * pre.last().expect("layers")[0];
        x[block.output] = out;
        x[block.clamped] = out.max(0.0);
        x[block.clamp_binary] = if out > 0.0 { 1.0 } else { 0.0 };

        let violated = rows.iter().find(|c| !c.satisfied(&x, FEAS_TOL));
        let out_of_bounds = continuous.iter().find(|&&v| {
            let var = &enc.variables[v];
            let slack = FEAS_TOL * (1.0 + x[v].abs());
            x[v] < var.lower - slack || x[v] > var.upper + slack
        });
        let feasible = violated.is_none() && out_of_bounds.is_none();
        if let Some(c) = violated {
            note(&mut report, format!("sample {k}: row {} ({:?}) violated", c.name, c.kind));
        } else if let Some(&v) = out_of_bounds {
            note(&mut report, format!("sample {k}: {} outside its bounds", enc.variables[v].name));
        }

        let mut pinned = true;
        for &v in &continuous {
            let (lo, hi) = implied_interval(enc, &rows, &x, v);
            if hi - lo > PIN_TOL || x[v] < lo - PIN_TOL || x[v] > hi + PIN_TOL {
                pinned = false;
                note(&mut report, format!("sample {k}: {} free in [{lo}, {hi}]", enc.variables[v].name));
                break;
            }
        }
        report.feasible += usize::from(feasible);
        report.pinned += usize::from(pinned);
        report.passed += usize::from(feasible && pinned);
    }
    report
}

fn note(report: &mut VerifyReport, msg: String) {
    if report.failures.len() < 10 {
        report.failures.push(msg);
    }
}

/// Interval for variable `v` implied by the rows with every other variable
/// held at `x`.
fn implied_interval(enc: &MilpEncoding, rows: &[&LinearConstraint], x: &[f64], v: usize) -> (f64, f64) {
    let var = &enc.variables[v];
    let (mut lo, mut hi) = (var.lower, var.upper);
    for c in rows {
        let Some(&(_, coef)) = c.terms.iter().find(|(u, _)| *u == v) else {
            continue;
        };
        if coef == 0.0 {
            continue;
        }
        let rest: f64 = c.terms.iter().filter(|(u, _)| *u != v).map(|&(u, a)| a * x[u]).sum();
        let bound = (c.rhs - rest) / coef;
        let upper = match (c.sense, coef > 0.0) {
            (Sense::Eq, _) => {
                lo = lo.max(bound);
                hi = hi.min(bound);
                continue;
            }
            (Sense::Le, true) | (Sense::Ge, false) => true,
            (Sense::Le, false) | (Sense::Ge, true) => false,
        };
        if upper {
            hi = hi.min(bound);
        } else {
            lo = lo.max(bound);
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, Mlp};

    /// One input, one hidden neuron `2x + 1`, identity output.
    fn toy() -> ReluNet {
        ReluNet::from_mlp(Mlp {
            activation: Activation::Relu,
            layers: vec![
                Dense {
                    n_in: 1,
                    n_out: 1,
                    weights: vec![2.0],
                    bias: vec![1.0],
                },
                Dense {
                    n_in: 1,
                    n_out: 1,
                    weights: vec![1.0],
                    bias: vec![0.0],
                },
            ],
        })
    }

    #[test]
    fn toy_bounds_by_hand() {
        let net = toy();
        let b = propagate_bounds(&net, &InputBox::new(vec![0.0], vec![1.0]).unwrap()).unwrap();
        assert_eq!((b.lo[0][0], b.hi[0][0]), (1.0, 3.0));
    }

    #[test]
    fn zero_width_box_gives_exact_values() {
        let net = toy();
        let b = propagate_bounds(&net, &InputBox::new(vec![0.25], vec![0.25]).unwrap()).unwrap();
        assert_eq!((b.lo[0][0], b.hi[0][0]), (1.5, 1.5));
        assert_eq!((b.lo[1][0], b.hi[1][0]), (1.5, 1.5));
    }

    #[test]
    fn toy_assignment_satisfies_the_four_rows() {
        let net = toy();
        let bounds = propagate_bounds(&net, &InputBox::new(vec![0.0], vec![1.0]).unwrap()).unwrap();
        let mut b = Builder {
            enc: MilpEncoding {
                variables: Vec::new(),
                constraints: Vec::new(),
                objective: Vec::new(),
                blocks: Vec::new(),
                switches: Vec::new(),
            },
        };
        let x = b.var("x".into(), 0.0, 1.0, false);
        let block = b.network(&net, &bounds, 0, vec![x]);
        let enc = b.enc;
        assert_eq!(enc.hidden_constraints(0), 4);
        let mut assign = vec![0.0; enc.variables.len()];
        assign[x] = 0.5;
        assign[block.hidden[0][0]] = 2.0;
        assign[block.binaries[0][0]] = 1.0;
        let hidden: Vec<_> = enc.constraints.iter().filter(|c| c.kind.is_hidden()).collect();
        assert!(hidden.iter().all(|c| c.satisfied(&assign, 0.0)));
    }

    #[test]
    fn linear_net_passes_vacuously() {
        let net = ReluNet::from_mlp(Mlp {
            activation: Activation::Relu,
            layers: vec![Dense {
                n_in: 1,
                n_out: 1,
                weights: vec![3.0],
                bias: vec![0.5],
            }],
        });
        let bounds = propagate_bounds(&net, &InputBox::new(vec![-1.0], vec![1.0]).unwrap()).unwrap();
        let mut b = Builder {
            enc: MilpEncoding {
                variables: Vec::new(),
                constraints: Vec::new(),
                objective: Vec::new(),
                blocks: Vec::new(),
                switches: Vec::new(),
            },
        };
        let x = b.var("x".into(), -1.0, 1.0, false);
        let block = b.network(&net, &bounds, 0, vec![x]);
        b.enc.blocks.push(block);
        assert_eq!(b.enc.hidden_constraints(0), 0);
        let samples: Vec<Vec<f64>> = (0..20).map(|i| vec![-1.0 + 0.1 * i as f64]).collect();
        assert!(verify_encoding(&b.enc, &net, &samples).all_passed());
    }
}
