//! Open-loop training data from the column model.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{History, N_FEATURES};
use crate::error::{invalid, Result};
use crate::grm::{outlet_concentration, Column, ContinuousInput, StepConfig};

/// How the open-loop episodes are excited.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationConfig {
    pub nominal: ContinuousInput,
    /// Half-width of the uniform multiplicative perturbation, redrawn every
    /// step for each input.
    pub relative_amplitude: f64,
    /// Episode lengths are uniform in `[min_episode, max_episode]` steps.
    pub min_episode: usize,
    pub max_episode: usize,
    pub seed: u64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            nominal: ContinuousInput::NOMINAL,
            relative_amplitude: 0.2,
            min_episode: 10,
            max_episode: 50,
            seed: 2024,
        }
    }
}

impl ExcitationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.relative_amplitude) {
            return Err(invalid("excitation.relative_amplitude", "must lie in [0, 1)"));
        }
        if self.min_episode == 0 || self.min_episode > self.max_episode {
            return Err(invalid("excitation.min_episode", "need 1 <= min_episode <= max_episode"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One transition `features -> y_{t+1}` inside an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: [f64; N_FEATURES],
    pub target: f64,
    pub episode: usize,
    /// Step within the episode, from 0.
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Sample>,
    /// First validation row.
    pub train_end: usize,
    /// First test row.
    pub val_end: usize,
}

impl Dataset {
    /// Chronological 70/15/15 split.
    pub fn from_rows(rows: Vec<Sample>) -> Self {
        let n = rows.len();
        let train_end = n * 70 / 100;
        let val_end = n * 85 / 100;
        Self {
            rows,
            train_end,
            val_end,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.rows[..self.train_end],
            Split::Validation => &self.rows[self.train_end..self.val_end],
            Split::Test => &self.rows[self.val_end..],
        }
    }

    pub fn split_of(&self, row: usize) -> Split {
        if row < self.train_end {
            Split::Train
        } else if row < self.val_end {
            Split::Validation
        } else {
            Split::Test
        }
    }

    /// Complete episodes lying entirely in `split`, as row slices.
    pub fn episodes(&self, split: Split) -> Vec<&[Sample]> {
        let rows = self.split(split);
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=rows.len() {
            if i == rows.len() || rows[i].episode != rows[start].episode {
                let ep = &rows[start..i];
                let complete_start = ep[0].t == 0;
                let complete_end = match self.rows.get(self.offset(split) + i) {
                    Some(next) => next.episode != ep[0].episode,
                    None => true,
                };
                if complete_start && complete_end {
                    out.push(ep);
                }
                start = i;
            }
        }
        out
    }

    fn offset(&self, split: Split) -> usize {
        match split {
            Split::Train => 0,
            Split::Validation => self.train_end,
            Split::Test => self.val_end,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "episode", "t", "split", "y_t", "y_t-1", "cF_t", "Q_t", "cF_t-1", "Q_t-1", "y_t+1",
        ])?;
        for (i, r) in self.rows.iter().enumerate() {
            let split = match self.split_of(i) {
                Split::Train => "train",
                Split::Validation => "validation",
                Split::Test => "test",
            };
            let mut rec = vec![r.episode.to_string(), r.t.to_string(), split.to_string()];
            rec.extend(r.features.iter().map(|v| v.to_string()));
            rec.push(r.target.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn excite(rng: &mut ChaCha8Rng, cfg: &ExcitationConfig) -> ContinuousInput {
    let a = cfg.relative_amplitude;
    if a == 0.0 {
        return cfg.nominal;
    }
    ContinuousInput {
        c_f: cfg.nominal.c_f * (1.0 + rng.random_range(-a..=a)),
        q: cfg.nominal.q * (1.0 + rng.random_range(-a..=a)),
    }
}

/// Simulate open-loop episodes from a fresh column until exactly `size`
/// transitions are collected. An episode whose integration fails is dropped.
pub fn generate_dataset(
    column: &Column,
    step: &StepConfig,
    cfg: &ExcitationConfig,
    size: usize,
) -> Result<Dataset> {
    cfg.validate()?;
    step.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(size);
    let mut episode = 0;
    while rows.len() < size {
        let len = rng.random_range(cfg.min_episode..=cfg.max_episode);
        let mut ep = Vec::with_capacity(len);
        let mut x = column.zero_state();
        let mut h = History::ZERO;
        let mut failed = false;
        for t in 0..len {
            let u = excite(&mut rng, cfg);
            x = match column.integrate_step(&x, u, step) {
                Ok(next) => next,
                Err(e) => {
                    log::warn!("dataset episode {episode} dropped at step {t}: {e}");
                    failed = true;
                    break;
                }
            };
            let y_next = outlet_concentration(&x);
            ep.push(Sample {
                features: h.features(u),
                target: y_next,
                episode,
                t,
            });
            h = History {
                y: y_next,
                y_prev: h.y,
                u_prev: u,
            };
        }
        if !failed {
            let take = ep.len().min(size - rows.len());
            rows.extend_from_slice(&ep[..take]);
        }
        episode += 1;
    }
    log::info!("dataset: {} rows from {episode} episodes", rows.len());
    Ok(Dataset::from_rows(rows))
}
