//! Proximal policy optimization with a Bernoulli switching head.

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{choose, evaluate_policy, probability_of_logit, Env, EnvConfig, Policy, POLICY_FORMAT_VERSION};
use crate::error::{invalid, Error, Result};
use crate::grm::Column;
use crate::nn::{Activation, Adam, Gradients, Mlp};
use crate::plant::LoopConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub episodes: usize,
    /// Episodes collected per policy update.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub clip_ratio: f64,
    pub gae_lambda: f64,
    pub hidden: Vec<usize>,
    /// Passes over each batch.
    pub update_epochs: usize,
    /// Transitions per gradient step.
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Switch probability of the untrained actor.
    pub initial_switch_probability: f64,
    /// Independent training runs for best-of selection.
    pub seeds: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            batch_size: 10,
            learning_rate: 1e-4,
            gamma: 0.99,
            clip_ratio: 0.2,
            gae_lambda: 0.95,
            hidden: vec![64, 64],
            update_epochs: 10,
            minibatch_size: 50,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            initial_switch_probability: 0.05,
            seeds: 5,
        }
    }
}

impl AgentConfig {
    /// Long-run episode and seed counts.
    pub fn full_scale() -> Self {
        Self {
            episodes: 10_000,
            seeds: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.batch_size == 0 || self.update_epochs == 0 || self.minibatch_size == 0 {
            return Err(invalid("agent", "episode, batch and epoch counts must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("agent.learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid("agent.gamma", "must lie in [0, 1]"));
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return Err(invalid("agent.clip_ratio", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(invalid("agent.gae_lambda", "must lie in [0, 1]"));
        }
        if !(self.initial_switch_probability > 0.0 && self.initial_switch_probability < 1.0) {
            return Err(invalid("agent.initial_switch_probability", "must lie in (0, 1)"));
        }
        if self.seeds == 0 {
            return Err(invalid("agent.seeds", "must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub batch: usize,
    /// Episodes completed so far.
    pub episodes: usize,
    /// Mean undiscounted episode return of the batch.
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of switch actions in the batch.
    pub switch_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPolicy {
    pub seed: u64,
    pub policy: Policy,
    pub log: Vec<BatchLog>,
}

impl TrainedPolicy {
    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.log {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Log-probability of action `a` (0 or 1) under a Bernoulli with logit `l`.
fn log_prob(l: f64, a: f64) -> f64 {
    a * l - softplus(l)
}

fn init_policy(env: &Env, cfg: &AgentConfig, rng: &mut ChaCha8Rng) -> Policy {
    let dim = env.observation_dim();
    let mut sizes = vec![dim];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut actor = Mlp::new(&sizes, Activation::Tanh, rng);
    actor.scale_output_layer(0.01);
    let p = cfg.initial_switch_probability;
    actor.layers.last_mut().expect("layers").bias[0] = (p / (1.0 - p)).ln();
    let critic = Mlp::new(&sizes, Activation::Tanh, rng);
    Policy {
        version: POLICY_FORMAT_VERSION,
        observation: env.config().observation,
        obs_scale: env.config().observation.scale(env.column().params(), env.config().nominal),
        actor,
        critic,
    }
}

struct Batch {
    obs: Array2<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
    episode_returns: Vec<f64>,
}

fn collect(env: &mut Env, policy: &Policy, cfg: &AgentConfig, episodes: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let dim = env.observation_dim();
    let mut flat = Vec::new();
    let mut b = Batch {
        obs: Array2::zeros((0, dim)),
        actions: Vec::new(),
        log_probs: Vec::new(),
        advantages: Vec::new(),
        returns: Vec::new(),
        episode_returns: Vec::with_capacity(episodes),
    };
    for _ in 0..episodes {
        let mut raw = env.reset();
        let (mut rewards, mut values) = (Vec::new(), Vec::new());
        let bootstrap = loop {
            let x = policy.normalize(&raw);
            let logit = policy.actor.forward(&x)[0];
            let a = choose(probability_of_logit(logit), false, rng);
            let af = f64::from(u8::from(a));
            values.push(policy.critic.forward(&x)[0]);
            b.log_probs.push(log_prob(logit, af));
            b.actions.push(af);
            flat.extend_from_slice(&x);
            let t = env.step(a)?;
            rewards.push(t.reward);
            if t.done {
                // Episodes end on the step limit, not in a terminal state.
                break policy.value(&t.observation);
            }
            raw = t.observation;
        };
        let mut adv = vec![0.0; rewards.len()];
        let mut next_value = bootstrap;
        let mut gae = 0.0;
        for k in (0..rewards.len()).rev() {
            let delta = rewards[k] + cfg.gamma * next_value - values[k];
            gae = delta + cfg.gamma * cfg.gae_lambda * gae;
            adv[k] = gae;
            next_value = values[k];
        }
        b.returns.extend(adv.iter().zip(&values).map(|(a, v)| a + v));
        b.advantages.extend(adv);
        b.episode_returns.push(rewards.iter().sum());
    }
    let n = b.actions.len();
    b.obs = Array2::from_shape_vec((n, dim), flat).expect("rows of observation length");
    let mean = b.advantages.iter().sum::<f64>() / n as f64;
    let std = (b.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    b.advantages.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
    Ok(b)
}

fn apply(net: &mut Mlp, opt: &mut Adam, mut grads: Gradients, max_norm: f64, batch: usize, what: &str) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Diverged {
            epoch: batch,
            reason: format!("non-finite {what} gradient"),
        });
    }
    grads.clip_norm(max_norm);
    opt.step(net, &grads);
    Ok(())
}

/// Train one policy. Identical seeds give identical weights and logs.
pub fn train_ppo(column: &Column, env_cfg: &EnvConfig, cfg: &AgentConfig, seed: u64) -> Result<TrainedPolicy> {
    cfg.validate()?;
    let mut env_cfg = env_cfg.clone();
    env_cfg.noise.seed = env_cfg.noise.seed.wrapping_add(seed);
    let mut env = Env::new(column.clone(), env_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = init_policy(&env, cfg, &mut rng);
    let mut actor_opt = Adam::new(&policy.actor, cfg.learning_rate);
    let mut critic_opt = Adam::new(&policy.critic, cfg.learning_rate);
    let mut log = Vec::new();
    let mut done_episodes = 0;
    let mut batch_index = 0;
    while done_episodes < cfg.episodes {
        batch_index += 1;
        let episodes = cfg.batch_size.min(cfg.episodes - done_episodes);
        let b = collect(&mut env, &policy, cfg, episodes, &mut rng)?;
        done_episodes += episodes;

        let n = b.actions.len();
        let mut order: Vec<usize> = (0..n).collect();
        let (mut policy_loss, mut value_loss, mut entropy, mut terms) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..cfg.update_epochs {
            order.shuffle(&mut rng);
            for mb in order.chunks(cfg.minibatch_size) {
                let m = mb.len() as f64;
                let xb = b.obs.select(Axis(0), mb);

                let tape = policy.actor.forward_batch(xb.view())?;
                let mut d = Array2::zeros((mb.len(), 1));
                for (k, &i) in mb.iter().enumerate() {
                    let l = tape.output()[[k, 0]];
                    let p = probability_of_logit(l);
                    let a = b.actions[i];
                    let ratio = (log_prob(l, a) - b.log_probs[i]).exp();
                    let adv = b.advantages[i];
                    let unclipped = ratio * adv;
                    let clipped = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv;
                    policy_loss -= unclipped.min(clipped);
                    let h = softplus(l) - p * l;
                    entropy += h;
                    terms += 1;
                    let mut g = if unclipped <= clipped { -adv * ratio * (a - p) } else { 0.0 };
                    // d/dl of the entropy bonus term -c H.
                    g += cfg.entropy_coef * l * p * (1.0 - p);
                    d[[k, 0]] = g / m;
                }
                let grads = policy.actor.backward(&tape, d.view());
                apply(&mut policy.actor, &mut actor_opt, grads, cfg.max_grad_norm, batch_index, "actor")?;

                let tape = policy.critic.forward_batch(xb.view())?;
                let mut d = Array2::zeros((mb.len(), 1));
                for (k, &i) in mb.iter().enumerate() {
                    let err = tape.output()[[k, 0]] - b.returns[i];
                    value_loss += err * err;
                    d[[k, 0]] = 2.0 * err / m;
                }
                let grads = policy.critic.backward(&tape, d.view());
                apply(&mut policy.critic, &mut critic_opt, grads, cfg.max_grad_norm, batch_index, "critic")?;
            }
        }
        let t = terms.max(1) as f64;
        let row = BatchLog {
            batch: batch_index,
            episodes: done_episodes,
            mean_return: b.episode_returns.iter().sum::<f64>() / b.episode_returns.len() as f64,
            policy_loss: policy_loss / t,
            value_loss: value_loss / t,
            entropy: entropy / t,
            switch_rate: b.actions.iter().sum::<f64>() / n as f64,
        };
        if !(row.policy_loss.is_finite() && row.value_loss.is_finite()) {
            return Err(Error::Diverged {
                epoch: batch_index,
                reason: format!("loss policy {} value {}", row.policy_loss, row.value_loss),
            });
        }
        log::debug!(
            "ppo seed {seed} batch {batch_index}: return {:.3} switch rate {:.3}",
            row.mean_return,
            row.switch_rate
        );
        log.push(row);
    }
    Ok(TrainedPolicy { seed, policy, log })
}

/// Train one policy per seed and keep the one with the lowest total cost on
/// `eval`; ties go to the earlier seed. Returns the winner and every seed's
/// evaluated cost.
pub fn train_best_of(
    column: &Column,
    env_cfg: &EnvConfig,
    cfg: &AgentConfig,
    seeds: &[u64],
    eval: &LoopConfig,
) -> Result<(TrainedPolicy, Vec<(u64, f64)>)> {
    if seeds.is_empty() {
        return Err(invalid("agent.seeds", "must be at least 1"));
    }
    let results: Vec<Result<(TrainedPolicy, f64)>> = seeds
        .par_iter()
        .map(|&seed| {
            let trained = train_ppo(column, env_cfg, cfg, seed)?;
            let ev = evaluate_policy(column, &trained.policy, eval, &[eval.noise.seed], env_cfg.w_s, env_cfg.w_d)?;
            Ok((trained, ev.mean_tc))
        })
        .collect();
    let mut scored = Vec::with_capacity(seeds.len());
    let mut best: Option<(TrainedPolicy, f64)> = None;
    for r in results {
        let (trained, tc) = r?;
        scored.push((trained.seed, tc));
        if best.as_ref().is_none_or(|(_, b)| tc < *b) {
            best = Some((trained, tc));
        }
    }
    Ok((best.expect("at least one seed").0, scored))
}
