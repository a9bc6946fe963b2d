//! General rate model of a protein-A capture column in loading mode.
//!
//! The PDE system (axial convection-dispersion in the mobile phase, film
//! transfer to the beads, spherical pore diffusion and two-site Langmuir
//! binding kinetics) is discretized by the method of lines and advanced with
//! a fixed-step classical Runge-Kutta scheme.
//!
//! State layout: for every axial node `i` the state holds `stride = N_r + 3`
//! consecutive entries `[c, cp_0 .. cp_{N_r-1}, q1, q2]`, where `cp_0` is the
//! bead center and `cp_{N_r-1}` the bead surface. The reference grid is
//! `N_z = 75`, `N_r = 5`, i.e. 600 states.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Feed concentration of the upstream harvest at steady state (mg/L).
pub const NOMINAL_FEED: f64 = 49.9219;
/// Feed flow rate of the upstream harvest at steady state (L/min).
pub const NOMINAL_FLOW: f64 = 21.6129;

/// Physical and numerical constants of the column.
///
/// Keys in parameter files are exactly the serde names below. Units: metres,
/// minutes, mg/L; `A` in m², flow rates in L/min.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnParams {
    #[serde(rename = "D_ax")]
    pub d_ax: f64,
    #[serde(rename = "A")]
    pub area: f64,
    pub eps_c: f64,
    pub eps_p: f64,
    pub k_f: f64,
    pub r_p: f64,
    #[serde(rename = "D_eff")]
    pub d_eff: f64,
    pub k_1: f64,
    pub k_2: f64,
    pub q_max_1: f64,
    pub q_max_2: f64,
    #[serde(rename = "K")]
    pub k_eq: f64,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "N_z")]
    pub n_z: usize,
    #[serde(rename = "N_r")]
    pub n_r: usize,
}

impl Default for ColumnParams {
    /// Calibrated reference column: 1% breakthrough under nominal feed at
    /// macro step 19. Regenerate with `capture calibrate`.
    fn default() -> Self {
        Self {
            q_max_1: 500.0 * CALIBRATED_CAPACITY_SCALE,
            q_max_2: 200.0 * CALIBRATED_CAPACITY_SCALE,
            ..Self::uncalibrated()
        }
    }
}

/// Capacity scale found by the calibration bisection for the seed set.
pub const CALIBRATED_CAPACITY_SCALE: f64 = 0.7737;

impl ColumnParams {
    /// Seed parameter set before calibration (capacity scale 1).
    ///
    /// Residence time L/u is 60 min at nominal flow, the axial cell Peclet
    /// number is 1, and the bead time constants are chosen so the explicit
    /// integrator stays cheap.
    pub fn uncalibrated() -> Self {
        let length = 1.0;
        let eps_c = 0.35;
        let r_p = 1.0e-4;
        let n_z = 75;
        let interstitial = length / 60.0;
        let superficial = interstitial * eps_c;
        Self {
            d_ax: interstitial * length / (n_z - 1) as f64,
            area: NOMINAL_FLOW / 1000.0 / superficial,
            eps_c,
            eps_p: 0.8,
            k_f: 0.1 * r_p,
            r_p,
            d_eff: r_p * r_p / 100.0,
            k_1: 1.0e-3,
            k_2: 4.0e-3,
            q_max_1: 500.0,
            q_max_2: 200.0,
            k_eq: 0.5,
            length,
            n_z,
            n_r: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("D_ax", self.d_ax),
            ("A", self.area),
            ("k_f", self.k_f),
            ("r_p", self.r_p),
            ("D_eff", self.d_eff),
            ("q_max_1", self.q_max_1),
            ("q_max_2", self.q_max_2),
            ("K", self.k_eq),
            ("L", self.length),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(name, format!("must be positive, got {value}")));
            }
        }
        // Kinetic constants may be zero (adsorption switched off).
        for (name, value) in [("k_1", self.k_1), ("k_2", self.k_2)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(invalid(name, format!("must be non-negative, got {value}")));
            }
        }
        for (name, value) in [("eps_c", self.eps_c), ("eps_p", self.eps_p)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(invalid(name, format!("must lie in (0, 1), got {value}")));
            }
        }
        if self.n_z < 3 {
            return Err(invalid("N_z", "need at least 3 axial nodes"));
        }
        if self.n_r < 2 {
            return Err(invalid("N_r", "need at least 2 radial shells"));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.n_r + 3
    }

    pub fn state_len(&self) -> usize {
        self.n_z * self.stride()
    }

    pub fn q_max(&self, site: Site) -> f64 {
        match site {
            Site::One => self.q_max_1,
            Site::Two => self.q_max_2,
        }
    }

    /// Copy with both site capacities multiplied by `scale`.
    pub fn with_capacity_scale(&self, scale: f64) -> Self {
        Self {
            q_max_1: self.q_max_1 * scale,
            q_max_2: self.q_max_2 * scale,
            ..*self
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let params: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Binding site of the two-site isotherm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    One,
    Two,
}

/// Continuous inputs of the column: feed concentration and flow rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousInput {
    /// Feed mAb concentration (mg/L).
    pub c_f: f64,
    /// Volumetric flow rate (L/min).
    pub q: f64,
}

impl ContinuousInput {
    pub const NOMINAL: Self = Self {
        c_f: NOMINAL_FEED,
        q: NOMINAL_FLOW,
    };

    pub fn new(c_f: f64, q: f64) -> Self {
        Self { c_f, q }
    }
}

impl Default for ContinuousInput {
    fn default() -> Self {
        Self::NOMINAL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Rk4,
}

/// Macro step settings for [`Column::integrate_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    /// Controller step (min).
    pub dt_macro: f64,
    pub n_substeps: usize,
    #[serde(default)]
    pub method: Integrator,
}

/// Substeps per 60 min macro step for the calibrated column, from the
/// stability screen (doubled) and checked by the substep-halving study.
pub const DEFAULT_SUBSTEPS: usize = 340;

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt_macro: 60.0,
            n_substeps: DEFAULT_SUBSTEPS,
            method: Integrator::Rk4,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_macro.is_finite() && self.dt_macro > 0.0) {
            return Err(invalid("dt_macro", "must be positive"));
        }
        if self.n_substeps == 0 {
            return Err(invalid("n_substeps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Flat column state; see the module docs for the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnState {
    data: Vec<f64>,
    stride: usize,
}

impl ColumnState {
    pub fn zeros(params: &ColumnParams) -> Self {
        Self {
            data: vec![0.0; params.state_len()],
            stride: params.stride(),
        }
    }

    pub fn from_vec(params: &ColumnParams, data: Vec<f64>) -> Result<Self> {
        if data.len() != params.state_len() {
            return Err(Error::Dimension {
                expected: params.state_len(),
                got: data.len(),
            });
        }
        Ok(Self {
            data,
            stride: params.stride(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn n_nodes(&self) -> usize {
        self.data.len() / self.stride
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.data[i * self.stride..(i + 1) * self.stride]
    }

    /// Index of the mobile-phase concentration at the outlet node.
    pub fn outlet_index(&self) -> usize {
        self.data.len() - self.stride
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            stride: self.stride,
        }
    }

    /// Snapshot CSV with columns `node_index, c, cp_0.., q1, q2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n_r = self.stride - 3;
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["node_index".to_string(), "c".to_string()];
        header.extend((0..n_r).map(|j| format!("cp_{j}")));
        header.push("q1".into());
        header.push("q2".into());
        wtr.write_record(&header)?;
        for i in 0..self.n_nodes() {
            let mut row = vec![i.to_string()];
            row.extend(self.node(i).iter().map(|v| format!("{v:e}")));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Mobile-phase concentration at the outlet node (mg/L).
pub fn outlet_concentration(state: &ColumnState) -> f64 {
    state.data[state.outlet_index()]
}

/// Steady state of the binding kinetics at pore concentration `c`.
pub fn equilibrium_loading(c: f64, params: &ColumnParams, site: Site) -> f64 {
    let kc = params.k_eq * c;
    params.q_max(site) * kc / (1.0 + kc)
}

/// Discretized column with precomputed grid constants.
#[derive(Debug, Clone)]
pub struct Column {
    params: ColumnParams,
    dz: f64,
    /// `D_eff r_{j+1/2}^2 / dr` for each interior shell interface.
    shell_conductance: Vec<f64>,
    /// Reciprocal shell volumes (`r^3/3` units).
    inv_shell_volume: Vec<f64>,
    /// Shell volume fractions of the bead, summing to 1.
    shell_weight: Vec<f64>,
    /// Film flux into the surface shell per unit `k_f (c - cp_s)`.
    surface_film: f64,
    /// Adsorption sink on the surface shell per unit `dq/dt`.
    surface_binding: f64,
    /// `(1 - eps_c)/eps_c * 3/r_p`.
    mobile_film: f64,
}

impl Column {
    pub fn new(params: ColumnParams) -> Result<Self> {
        params.validate()?;
        let n_r = params.n_r;
        let dz = params.length / (params.n_z - 1) as f64;
        let dr = params.r_p / (n_r - 1) as f64;
        let faces: Vec<f64> = (0..n_r - 1).map(|j| (j as f64 + 0.5) * dr).collect();
        let mut volume = vec![0.0; n_r];
        volume[0] = faces[0].powi(3) / 3.0;
        for j in 1..n_r - 1 {
            volume[j] = (faces[j].powi(3) - faces[j - 1].powi(3)) / 3.0;
        }
        volume[n_r - 1] = (params.r_p.powi(3) - faces[n_r - 2].powi(3)) / 3.0;
        let bead = params.r_p.powi(3) / 3.0;
        let last = volume[n_r - 1];
        Ok(Self {
            params,
            dz,
            shell_conductance: faces.iter().map(|f| params.d_eff * f * f / dr).collect(),
            inv_shell_volume: volume.iter().map(|v| 1.0 / v).collect(),
            shell_weight: volume.iter().map(|v| v / bead).collect(),
            surface_film: params.r_p * params.r_p / (params.eps_p * last),
            surface_binding: bead / (params.eps_p * last),
            mobile_film: (1.0 - params.eps_c) / params.eps_c * 3.0 / params.r_p,
        })
    }

    pub fn params(&self) -> &ColumnParams {
        &self.params
    }

    pub fn zero_state(&self) -> ColumnState {
        ColumnState::zeros(&self.params)
    }

    /// Fully loaded column in equilibrium with feed concentration `c_f`.
    pub fn saturated_state(&self, c_f: f64) -> ColumnState {
        let p = &self.params;
        let mut state = self.zero_state();
        let q1 = equilibrium_loading(c_f, p, Site::One);
        let q2 = equilibrium_loading(c_f, p, Site::Two);
        for node in state.data.chunks_mut(p.stride()) {
            node[..=p.n_r].fill(c_f);
            node[p.n_r + 1] = q1;
            node[p.n_r + 2] = q2;
        }
        state
    }

    /// Column volume in litres.
    pub fn volume_litres(&self) -> f64 {
        self.params.area * self.params.length * 1000.0
    }

    /// Superficial velocity (m/min) for flow rate `q` (L/min).
    pub fn superficial_velocity(&self, q: f64) -> f64 {
        q / 1000.0 / self.params.area
    }

    /// Time derivative of the discretized system (units per minute).
    pub fn rhs(&self, state: &ColumnState, u: ContinuousInput) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut out = vec![0.0; state.len()];
        self.rhs_into(&state.data, u, &mut out);
        Ok(out)
    }

    fn check_state(&self, state: &ColumnState) -> Result<()> {
        if state.len() != self.params.state_len() || state.stride != self.params.stride() {
            return Err(Error::Dimension {
                expected: self.params.state_len(),
                got: state.len(),
            });
        }
        if let Some(index) = state.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "column state",
                index,
            });
        }
        Ok(())
    }

    pub(crate) fn rhs_into(&self, x: &[f64], u: ContinuousInput, out: &mut [f64]) {
        let p = &self.params;
        let stride = p.stride();
        let n_z = p.n_z;
        let n_r = p.n_r;
        let surf = n_r; // offset of the surface shell within a node
        let v = self.superficial_velocity(u.q);
        let vel = v / p.eps_c;
        let disp = p.d_ax / (self.dz * self.dz);
        let half_inv_dz = 0.5 / self.dz;
        let robin = v / (p.eps_c * p.d_ax);
        let inv_k = 1.0 / p.k_eq;

        for i in 0..n_z {
            let base = i * stride;
            let node = &x[base..base + stride];
            let c = node[0];

            // Axial dispersion and convection with ghost nodes at both ends.
            let (c_zz, c_z) = if i == 0 {
                let c1 = x[stride];
                let ghost = c1 - 2.0 * self.dz * robin * (c - u.c_f);
                ((c1 - 2.0 * c + ghost) * disp, robin * (c - u.c_f))
            } else if i == n_z - 1 {
                let cm = x[base - stride];
                (2.0 * (cm - c) * disp, 0.0)
            } else {
                let cm = x[base - stride];
                let cp = x[base + stride];
                ((cp - 2.0 * c + cm) * disp, (cp - cm) * half_inv_dz)
            };
            let c_s = node[surf];
            let film = p.k_f * (c - c_s);
            let d = &mut out[base..base + stride];
            d[0] = c_zz - vel * c_z - self.mobile_film * film;

            // Two-site binding driven by the surface pore concentration.
            let q1 = node[n_r + 1];
            let q2 = node[n_r + 2];
            let dq1 = p.k_1 * ((p.q_max_1 - q1) * c_s - q1 * inv_k);
            let dq2 = p.k_2 * ((p.q_max_2 - q2) * c_s - q2 * inv_k);
            d[n_r + 1] = dq1;
            d[n_r + 2] = dq2;

            // Spherical diffusion in conservative form; shells are 1..=n_r.
            for j in 0..n_r {
                d[1 + j] = 0.0;
            }
            for j in 0..n_r - 1 {
                let flux = self.shell_conductance[j] * (node[2 + j] - node[1 + j]);
                d[1 + j] += flux * self.inv_shell_volume[j];
                d[2 + j] -= flux * self.inv_shell_volume[j + 1];
            }
            d[surf] += self.surface_film * film - self.surface_binding * (dq1 + dq2);
        }
    }

    /// Advance `state` by one macro step with constant input `u`.
    pub fn integrate_step(
        &self,
        state: &ColumnState,
        u: ContinuousInput,
        cfg: &StepConfig,
    ) -> Result<ColumnState> {
        cfg.validate()?;
        self.check_state(state)?;
        let n = state.len();
        let h = cfg.dt_macro / cfg.n_substeps as f64;
        let mut x = state.data.clone();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for _ in 0..cfg.n_substeps {
            self.rhs_into(&x, u, &mut k1);
            axpy_into(&mut tmp, &x, 0.5 * h, &k1);
            self.rhs_into(&tmp, u, &mut k2);
            axpy_into(&mut tmp, &x, 0.5 * h, &k2);
            self.rhs_into(&tmp, u, &mut k3);
            axpy_into(&mut tmp, &x, h, &k3);
            self.rhs_into(&tmp, u, &mut k4);
            let w = h / 6.0;
            for m in 0..n {
                x[m] += w * (k1[m] + 2.0 * (k2[m] + k3[m]) + k4[m]);
            }
        }
        let tol = negativity_tolerance(u.c_f, &x);
        let stride = self.params.stride();
        for (m, value) in x.iter_mut().enumerate() {
            if !value.is_finite() || *value < -tol {
                return Err(Error::Unstable {
                    node: m / stride,
                    slot: m % stride,
                    value: *value,
                });
            }
            if *value < 0.0 {
                *value = 0.0;
            }
        }
        Ok(ColumnState { data: x, stride })
    }

    /// Liquid plus adsorbed mAb held in the column (mg).
    pub fn total_mab_inventory(&self, state: &ColumnState, column_volume: f64) -> f64 {
        let p = &self.params;
        let n_z = p.n_z;
        let mut sum = 0.0;
        for i in 0..n_z {
            let node = state.node(i);
            let pore: f64 = self
                .shell_weight
                .iter()
                .zip(&node[1..=p.n_r])
                .map(|(w, c)| w * c)
                .sum();
            let local = p.eps_c * node[0]
                + (1.0 - p.eps_c) * (p.eps_p * pore + node[p.n_r + 1] + node[p.n_r + 2]);
            let w = if i == 0 || i == n_z - 1 { 0.5 } else { 1.0 };
            sum += w * local;
        }
        column_volume * sum / (n_z - 1) as f64
    }

    /// Discrete spherical diffusion operator alone (no film or binding terms).
    pub fn bead_diffusion(&self, shells: &[f64]) -> Vec<f64> {
        let n_r = self.params.n_r;
        let mut d = vec![0.0; n_r];
        for j in 0..n_r - 1 {
            let flux = self.shell_conductance[j] * (shells[j + 1] - shells[j]);
            d[j] += flux * self.inv_shell_volume[j];
            d[j + 1] -= flux * self.inv_shell_volume[j + 1];
        }
        d
    }

    /// True when every entry respects the nonnegativity and capacity bounds.
    pub fn is_admissible(&self, state: &ColumnState, c_f: f64) -> bool {
        let p = &self.params;
        let tol = negativity_tolerance(c_f, &state.data);
        let c_cap = c_f * (1.0 + 1e-6);
        state.data.chunks(p.stride()).all(|node| {
            node.iter().all(|v| v.is_finite() && *v >= -tol)
                && node[..=p.n_r].iter().all(|&c| c <= c_cap)
                && node[p.n_r + 1] <= p.q_max_1
                && node[p.n_r + 2] <= p.q_max_2
        })
    }

    /// Stability screen: the smallest substep count for which a nominal
    /// open-loop run of `probe_steps` macro steps stays admissible, doubled.
    pub fn screen_substeps(
        &self,
        u: ContinuousInput,
        dt_macro: f64,
        probe_steps: usize,
    ) -> Result<usize> {
        let passes = |n: usize| -> bool {
            let cfg = StepConfig {
                dt_macro,
                n_substeps: n,
                method: Integrator::Rk4,
            };
            let mut state = self.zero_state();
            for _ in 0..probe_steps {
                match self.integrate_step(&state, u, &cfg) {
                    Ok(next) if self.is_admissible(&next, u.c_f) => state = next,
                    _ => return false,
                }
            }
            true
        };
        let mut hi = 1;
        while !passes(hi) {
            hi *= 2;
            if hi > 1 << 20 {
                return Err(invalid("n_substeps", "no stable substep count found"));
            }
        }
        let mut lo = hi / 2;
        if lo == 0 {
            return Ok(2);
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if passes(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(2 * hi)
    }
}

/// Entries in `[-tol, 0)` are roundoff and get clamped; anything below is a
/// failure. The scale falls back to the largest entry when the feed is zero.
fn negativity_tolerance(c_f: f64, x: &[f64]) -> f64 {
    let scale = if c_f > 0.0 {
        c_f
    } else {
        x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    };
    1e-10 * scale
}

fn axpy_into(out: &mut [f64], x: &[f64], a: f64, y: &[f64]) {
    for ((o, xv), yv) in out.iter_mut().zip(x).zip(y) {
        *o = xv + a * yv;
    }
}
