//! Experiment matrices: one scenario template, one swept dimension.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{build_controller, ControllerSpec, Scenario};
use crate::error::{invalid, Error, Result};
use crate::grm::Column;
use crate::plant::{compute_metrics, run_closed_loop};

/// The swept dimension and its values, in table order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "kebab-case")]
pub enum Sweep {
    Horizon(Vec<usize>),
    /// `[W_s, W_d]` pairs.
    Weights(Vec<[f64; 2]>),
    /// Process-noise standard deviations.
    ProcessNoise(Vec<f64>),
    /// `[alpha, std]` pairs.
    MeasurementNoise(Vec<[f64; 2]>),
    /// Method comparison.
    Controller(Vec<ControllerSpec>),
}

impl Sweep {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Horizon(_) => "horizon",
            Self::Weights(_) => "weights",
            Self::ProcessNoise(_) => "process-noise",
            Self::MeasurementNoise(_) => "measurement-noise",
            Self::Controller(_) => "controller",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Horizon(v) => v.len(),
            Self::Weights(v) => v.len(),
            Self::ProcessNoise(v) => v.len(),
            Self::MeasurementNoise(v) => v.len(),
            Self::Controller(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label and scenario of every sweep point.
    pub fn points(&self, template: &Scenario) -> Vec<(String, Scenario)> {
        let with = |f: &dyn Fn(&mut Scenario)| {
            let mut s = template.clone();
            f(&mut s);
            s
        };
        match self {
            Self::Horizon(v) => v
                .iter()
                .map(|&n| (format!("N={n}"), with(&|s| s.horizon = n)))
                .collect(),
            Self::Weights(v) => v
                .iter()
                .map(|&[w_s, w_d]| {
                    (
                        format!("W_s={w_s},W_d={w_d}"),
                        with(&|s| {
                            s.weights.w_s = w_s;
                            s.weights.w_d = w_d;
                        }),
                    )
                })
                .collect(),
            Self::ProcessNoise(v) => v
                .iter()
                .map(|&std| (format!("process_std={std}"), with(&|s| s.noise.process_std = std)))
                .collect(),
            Self::MeasurementNoise(v) => v
                .iter()
                .map(|&[alpha, std]| {
                    (
                        format!("meas_alpha={alpha},meas_std={std}"),
                        with(&|s| {
                            s.noise.meas_alpha = alpha;
                            s.noise.meas_std = std;
                        }),
                    )
                })
                .collect(),
            Self::Controller(v) => v
                .iter()
                .map(|c| (c.kind().to_string(), with(&|s| s.controller = c.clone())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMatrix {
    pub name: String,
    pub template: Scenario,
    pub sweep: Sweep,
}

impl ExperimentMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(invalid("sweep.values", "must not be empty"));
        }
        for (_, s) in self.sweep.points(&self.template) {
            s.validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut m: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some(base) = path.parent() {
            m.template.resolve_paths(base);
            if let Sweep::Controller(specs) = &mut m.sweep {
                for spec in specs {
                    let mut s = Scenario {
                        controller: spec.clone(),
                        ..Scenario::default()
                    };
                    s.resolve_paths(base);
                    *spec = s.controller;
                }
            }
        }
        m.validate()?;
        Ok(m)
    }
}

/// One closed-loop run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario_id: String,
    pub sweep: String,
    pub sweep_index: usize,
    pub point: String,
    pub controller: String,
    pub seed: u64,
    #[serde(rename = "W_s")]
    pub w_s: f64,
    #[serde(rename = "W_d")]
    pub w_d: f64,
    #[serde(rename = "PL")]
    pub pl: f64,
    #[serde(rename = "TC")]
    pub tc: f64,
    pub switches: usize,
    /// 1-based steps joined by `;`.
    pub switch_steps: String,
    /// Controller time summed over the run.
    pub solve_seconds: f64,
    pub max_solve_seconds: f64,
    pub wall_seconds: f64,
    /// Empty for a complete run.
    pub failure: String,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        !self.failure.is_empty()
    }

    pub fn switch_step_list(&self) -> Vec<usize> {
        self.switch_steps
            .split(';')
            .filter(|s| !s.is_empty())
            .filter_map(|s| s.parse().ok())
            .collect()
    }

    /// TC recomputed from the row's own PL, switch count and weights.
    pub fn tc_identity_holds(&self) -> bool {
        self.tc == self.w_s * self.pl + self.w_d * self.switches as f64
    }
}

/// Rows of a finished experiment, ordered by sweep point then seed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
}

fn run_cell(
    matrix: &str,
    sweep: &str,
    index: usize,
    label: &str,
    scenario: &Scenario,
    seed: u64,
) -> ResultRow {
    let mut row = ResultRow {
        scenario_id: format!("{matrix}/{label}"),
        sweep: sweep.into(),
        sweep_index: index,
        point: label.into(),
        controller: scenario.controller.kind().into(),
        seed,
        w_s: scenario.weights.w_s,
        w_d: scenario.weights.w_d,
        pl: f64::NAN,
        tc: f64::NAN,
        switches: 0,
        switch_steps: String::new(),
        solve_seconds: 0.0,
        max_solve_seconds: 0.0,
        wall_seconds: 0.0,
        failure: String::new(),
    };
    let started = Instant::now();
    let outcome = (|| -> Result<_> {
        let column = Column::new(scenario.column_params()?)?;
        let mut controller = build_controller(&scenario.controller, &column, scenario)?;
        run_closed_loop(&column, controller.as_mut(), &scenario.loop_config(seed))
    })();
    row.wall_seconds = started.elapsed().as_secs_f64();
    match outcome {
        Ok(traj) => {
            let m = compute_metrics(&traj, scenario.weights.w_s, scenario.weights.w_d);
            row.pl = m.pl;
            row.tc = m.tc;
            row.switches = m.switches;
            row.switch_steps = m.switch_steps_cell();
            row.solve_seconds = traj.records.iter().map(|r| r.solve_seconds).sum();
            row.max_solve_seconds = traj.records.iter().map(|r| r.solve_seconds).fold(0.0, f64::max);
            if let Some(f) = traj.failure {
                row.failure = f;
            }
        }
        Err(e) => row.failure = e.to_string(),
    }
    if row.failed() {
        log::warn!("{} seed {seed}: {}", row.scenario_id, row.failure);
    }
    row
}

/// Run every (sweep point, seed) cell on up to `workers` threads.
///
/// Missing model files abort before any run. A failing cell is recorded in
/// its row and the matrix continues.
pub fn run_experiment(matrix: &ExperimentMatrix, workers: usize) -> Result<ExperimentResult> {
    matrix.validate()?;
    let points = matrix.sweep.points(&matrix.template);
    for (_, s) in &points {
        for path in s.controller.artifacts() {
            if !path.exists() {
                return Err(Error::MissingArtifact(path.to_path_buf()));
            }
        }
    }
    let cells: Vec<(usize, &str, &Scenario, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, (label, s))| s.seeds.iter().map(move |&seed| (i, label.as_str(), s, seed)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?;
    let kind = matrix.sweep.kind();
    let mut rows: Vec<ResultRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, label, s, seed)| run_cell(&matrix.name, kind, i, label, s, seed))
            .collect()
    });
    rows.sort_by_key(|r| (r.sweep_index, r.seed));
    Ok(ExperimentResult { rows })
}

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Per-point averages over seeds.
    pub fn summarize(&self) -> Vec<PointSummary> {
        let mut out: Vec<PointSummary> = Vec::new();
        for row in &self.rows {
            let idx = match out.iter().position(|p| p.scenario_id == row.scenario_id) {
                Some(i) => i,
                None => {
                    out.push(PointSummary {
                        scenario_id: row.scenario_id.clone(),
                        sweep: row.sweep.clone(),
                        sweep_index: row.sweep_index,
                        point: row.point.clone(),
                        controller: row.controller.clone(),
                        runs: 0,
                        failures: 0,
                        mean_pl: 0.0,
                        mean_tc: 0.0,
                        mean_switches: 0.0,
                        mean_solve_seconds: 0.0,
                        switch_steps: String::new(),
                    });
                    out.len() - 1
                }
            };
            let p = &mut out[idx];
            if row.failed() {
                p.failures += 1;
                continue;
            }
            p.runs += 1;
            p.mean_pl += row.pl;
            p.mean_tc += row.tc;
            p.mean_switches += row.switches as f64;
            p.mean_solve_seconds += row.solve_seconds;
            if !p.switch_steps.is_empty() {
                p.switch_steps.push_str(" | ");
            }
            p.switch_steps.push_str(&row.switch_steps);
        }
        for p in &mut out {
            let n = p.runs.max(1) as f64;
            p.mean_pl /= n;
            p.mean_tc /= n;
            p.mean_switches /= n;
            p.mean_solve_seconds /= n;
        }
        out
    }
}

/// Averages of one sweep point, in the layout of the noise tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub scenario_id: String,
    pub sweep: String,
    pub sweep_index: usize,
    pub point: String,
    pub controller: String,
    pub runs: usize,
    pub failures: usize,
    #[serde(rename = "PL")]
    pub mean_pl: f64,
    #[serde(rename = "TC")]
    pub mean_tc: f64,
    #[serde(rename = "switches")]
    pub mean_switches: f64,
    pub mean_solve_seconds: f64,
    /// Switch steps of every seed, `|`-separated.
    pub switch_steps: String,
}

pub fn write_summary_csv<W: Write>(summary: &[PointSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in summary {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
