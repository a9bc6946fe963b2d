//! Capacity calibration against a target breakthrough step.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grm::{outlet_concentration, Column, ColumnParams, ContinuousInput, StepConfig};
use crate::plant::DEFAULT_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// 1-based macro step at which the open-loop outlet first reaches the
    /// threshold.
    pub target: usize,
    pub tolerance: usize,
    /// Breakthrough threshold as a fraction of the feed concentration.
    pub threshold: f64,
    /// Bracket of the capacity scale.
    pub scale_lo: f64,
    pub scale_hi: f64,
    /// Bisection stops when the bracket is narrower than this.
    pub resolution: f64,
    /// Decimal places kept in the frozen scale.
    pub decimals: i32,
    /// Open-loop runs give up after this many steps.
    pub max_steps: usize,
    pub nominal: ContinuousInput,
    pub step: StepConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            target: 19,
            tolerance: 1,
            threshold: DEFAULT_THRESHOLD,
            scale_lo: 0.05,
            scale_hi: 2.0,
            resolution: 1e-6,
            decimals: 4,
            max_steps: 200,
            nominal: ContinuousInput::NOMINAL,
            step: StepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Scale applied to the seed capacities.
    pub scale: f64,
    pub params: ColumnParams,
    pub breakthrough_step: usize,
    /// Scales on which the breakthrough step equals the target.
    pub interval: (f64, f64),
}

/// First 1-based step whose starting outlet reaches `threshold * c_F` under
/// constant inputs, or `None` within `max_steps`. Step `k` starts from the
/// state after `k - 1` macro steps, as in the closed loop.
pub fn breakthrough_step(
    column: &Column,
    u: ContinuousInput,
    step: &StepConfig,
    threshold: f64,
    max_steps: usize,
) -> Result<Option<usize>> {
    let mut x = column.zero_state();
    for k in 1..=max_steps {
        if outlet_concentration(&x) >= threshold * u.c_f {
            return Ok(Some(k));
        }
        x = column.integrate_step(&x, u, step)?;
    }
    Ok(None)
}

fn step_at(seed: &ColumnParams, scale: f64, cfg: &CalibrationConfig) -> Result<usize> {
    let column = Column::new(seed.with_capacity_scale(scale))?;
    let k = breakthrough_step(&column, cfg.nominal, &cfg.step, cfg.threshold, cfg.max_steps)?;
    Ok(k.unwrap_or(cfg.max_steps + 1))
}

/// Smallest scale in the bracket whose breakthrough step is at least `k`.
fn first_scale_reaching(seed: &ColumnParams, k: usize, cfg: &CalibrationConfig) -> Result<f64> {
    let (mut lo, mut hi) = (cfg.scale_lo, cfg.scale_hi);
    while hi - lo > cfg.resolution {
        let mid = 0.5 * (lo + hi);
        if step_at(seed, mid, cfg)? >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Scale both site capacities of `seed` so the nominal breakthrough step
/// equals the target.
///
/// The breakthrough step is non-decreasing in capacity. The scales giving the
/// target step form an interval; its midpoint, rounded to `decimals`, is
/// returned, which keeps the largest margin to the neighbouring steps.
pub fn calibrate(seed: &ColumnParams, cfg: &CalibrationConfig) -> Result<Calibration> {
    seed.validate()?;
    if !(cfg.scale_lo > 0.0 && cfg.scale_lo < cfg.scale_hi && cfg.resolution > 0.0) {
        return Err(invalid("calibration.scale_lo", "need 0 < scale_lo < scale_hi and positive resolution"));
    }
    let lo_step = step_at(seed, cfg.scale_lo, cfg)?;
    let hi_step = step_at(seed, cfg.scale_hi, cfg)?;
    let reachable = |k: usize| lo_step <= k && k <= hi_step;
    let target = match (0..=cfg.tolerance)
        .flat_map(|d| [cfg.target.checked_add(d), cfg.target.checked_sub(d)])
        .flatten()
        .find(|&k| reachable(k))
    {
        Some(k) => k,
        None => {
            return Err(Error::Unreachable {
                target: cfg.target,
                lo: lo_step,
                hi: hi_step,
            })
        }
    };
    let a = if target == lo_step {
        cfg.scale_lo
    } else {
        first_scale_reaching(seed, target, cfg)?
    };
    let b = if target == hi_step {
        cfg.scale_hi
    } else {
        first_scale_reaching(seed, target + 1, cfg)?
    };
    let factor = 10f64.powi(cfg.decimals);
    let mut scale = (0.5 * (a + b) * factor).round() / factor;
    if !(a..b).contains(&scale) {
        scale = 0.5 * (a + b);
    }
    let breakthrough = step_at(seed, scale, cfg)?;
    log::info!("calibrated capacity scale {scale} (interval {a:.6}..{b:.6}), breakthrough at step {breakthrough}");
    Ok(Calibration {
        scale,
        params: seed.with_capacity_scale(scale),
        breakthrough_step: breakthrough,
        interval: (a, b),
    })
}
