//! Minibatch training of the surrogate and its accuracy checks.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rollout_inputs, Dataset, History, ReluNet, Sample, Split, FEATURE_NAMES, FORMAT_VERSION, N_FEATURES};
use crate::error::{invalid, Error, Result};
use crate::grm::ContinuousInput;
use crate::nn::{Activation, Adam, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![200, 160],
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 80,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Normalized mean squared errors.
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // Constant columns keep unit scale.
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (mean, std)
}

fn design(net: &ReluNet, rows: &[Sample]) -> (Array2<f64>, Array2<f64>) {
    let x = Array2::from_shape_fn((rows.len(), N_FEATURES), |(i, j)| {
        (rows[i].features[j] - net.input_mean[j]) / net.input_std[j]
    });
    let y = Array2::from_shape_fn((rows.len(), 1), |(i, _)| {
        (rows[i].target - net.output_mean) / net.output_std
    });
    (x, y)
}

fn mse(net: &Mlp, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x.nrows() == 0 {
        return Ok(0.0);
    }
    let tape = net.forward_batch(x.view())?;
    Ok((tape.output() - y).mapv(|v| v * v).mean().unwrap_or(0.0))
}

/// Fit the surrogate by minibatch Adam on mean squared error and keep the
/// weights of the epoch with the lowest validation error.
pub fn train_network(ds: &Dataset, cfg: &TrainConfig) -> Result<(ReluNet, TrainReport)> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(invalid("train", "batch_size and epochs must be positive"));
    }
    let train = ds.split(Split::Train);
    if train.is_empty() {
        return Err(invalid("train", "empty training split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![N_FEATURES];
    sizes.extend(&cfg.hidden);
    sizes.push(1);

    let mut input_mean = Vec::with_capacity(N_FEATURES);
    let mut input_std = Vec::with_capacity(N_FEATURES);
    for j in 0..N_FEATURES {
        let (m, s) = mean_std(train.iter().map(move |r| r.features[j]));
        input_mean.push(m);
        input_std.push(s);
    }
    let (output_mean, output_std) = mean_std(train.iter().map(|r| r.target));
    let mut net = ReluNet {
        version: FORMAT_VERSION,
        features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        input_mean,
        input_std,
        output_mean,
        output_std,
        mlp: Mlp::new(&sizes, Activation::Relu, &mut rng),
    };

    let (x_train, y_train) = design(&net, train);
    let val = ds.split(Split::Validation);
    let (x_val, y_val) = design(&net, if val.is_empty() { train } else { val });

    let mut adam = Adam::new(&net.mlp, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, net.mlp.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = x_train.select(Axis(0), batch);
            let yb = y_train.select(Axis(0), batch);
            let tape = net.mlp.forward_batch(xb.view())?;
            let d = (tape.output() - &yb) * (2.0 / batch.len() as f64);
            let grads = net.mlp.backward(&tape, d.view());
            adam.step(&mut net.mlp, &grads);
        }
        let train_mse = mse(&net.mlp, &x_train, &y_train)?;
        let val_mse = mse(&net.mlp, &x_val, &y_val)?;
        if !val_mse.is_finite() || !net.mlp.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("validation error {val_mse}"),
            });
        }
        log::info!("surrogate epoch {epoch}: train {train_mse:.3e} val {val_mse:.3e}");
        report.epochs.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
        });
        if val_mse < best.0 {
            best = (val_mse, net.mlp.clone());
            report.best_epoch = epoch;
        }
    }
    net.mlp = best.1;
    Ok((net, report))
}

/// Root-mean-square one-step error in physical units.
pub fn evaluate_one_step(net: &ReluNet, rows: &[Sample]) -> Result<f64> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for r in rows {
        let e = net.predict(&r.features)? - r.target;
        sum += e * e;
    }
    Ok((sum / rows.len() as f64).sqrt())
}

/// Largest absolute error of `horizon`-step recursive predictions, started at
/// every `stride`-th step of each episode with at least `horizon` steps left.
pub fn rollout_errors(net: &ReluNet, episodes: &[&[Sample]], horizon: usize, stride: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for ep in episodes {
        if ep.len() < horizon {
            continue;
        }
        for start in (0..=ep.len() - horizon).step_by(stride.max(1)) {
            let f = &ep[start].features;
            let history = History {
                y: f[0],
                y_prev: f[1],
                u_prev: ContinuousInput::new(f[4], f[5]),
            };
            let plan: Vec<(bool, ContinuousInput)> = ep[start..start + horizon]
                .iter()
                .map(|r| (false, ContinuousInput::new(r.features[2], r.features[3])))
                .collect();
            let pred = rollout_inputs(net, history, &plan)?;
            for (p, r) in pred.iter().zip(&ep[start..start + horizon]) {
                worst = worst.max((p - r.target).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_rows(n: usize) -> Dataset {
        let rows = (0..n)
            .map(|i| {
                let x = (i * 37 % n) as f64 / n as f64 * 2.0;
                Sample {
                    features: [x, 0.5 * x, 50.0, 21.0, 49.0, 20.0],
                    target: 2.0 * x + 1.0,
                    episode: i / 20,
                    t: i % 20,
                }
            })
            .collect();
        Dataset::from_rows(rows)
    }

    #[test]
    fn constant_target_is_learned() {
        let rows: Vec<Sample> = (0..200)
            .map(|i| Sample {
                features: [(i * 37 % 200) as f64 * 0.01, 0.5, 50.0, 21.0, 49.0, 20.0],
                target: 3.0,
                episode: i / 20,
                t: i % 20,
            })
            .collect();
        let ds = Dataset::from_rows(rows);
        let cfg = TrainConfig {
            hidden: vec![4],
            batch_size: 200,
            epochs: 8000,
            ..TrainConfig::default()
        };
        let (net, _) = train_network(&ds, &cfg).unwrap();
        // Output scale is 1 for a constant target, so this is normalized.
        let worst = ds.rows.iter().map(|r| (net.predict(&r.features).unwrap() - 3.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "worst {worst}");
    }

    #[test]
    fn linear_target_is_learned() {
        let ds = linear_rows(400);
        let cfg = TrainConfig {
            hidden: vec![16],
            epochs: 150,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let (net, report) = train_network(&ds, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 150);
        let rmse = evaluate_one_step(&net, ds.split(Split::Test)).unwrap();
        assert!(rmse < 0.05, "rmse {rmse}");
    }

    #[test]
    fn best_validation_epoch_is_kept() {
        let ds = linear_rows(200);
        let cfg = TrainConfig {
            hidden: vec![8],
            epochs: 30,
            ..TrainConfig::default()
        };
        let (net, report) = train_network(&ds, &cfg).unwrap();
        let best = report.epochs[report.best_epoch - 1];
        let min = report.epochs.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(best.val_mse, min);
        let (x, y) = design(&net, ds.split(Split::Validation));
        assert!((mse(&net.mlp, &x, &y).unwrap() - min).abs() <= 1e-12 * (1.0 + min));
    }

    #[test]
    fn zero_epochs_are_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train_network(&linear_rows(50), &cfg).is_err());
    }
}
