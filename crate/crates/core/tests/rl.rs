use capture_core::grm::{outlet_concentration, Column, ColumnParams, ContinuousInput};
use capture_core::nn::{Activation, Dense, Mlp};
use capture_core::plant::{
    compute_metrics, run_closed_loop, Controller, LoopConfig, NoiseConfig, Observation, Traditional,
};
use capture_core::rl::{
    evaluate_policy, train_ppo, AgentConfig, Env, EnvConfig, ObservationMode, Policy, PolicyController,
    POLICY_FORMAT_VERSION,
};
use capture_core::Error;
use proptest::prelude::*;

fn column() -> Column {
    Column::new(ColumnParams::default()).unwrap()
}

struct Script(Vec<bool>);

impl Controller for Script {
    fn name(&self) -> String {
        "script".into()
    }

    fn decide(&mut self, obs: &Observation<'_>) -> capture_core::Result<bool> {
        Ok(self.0[obs.step - 1])
    }
}

/// Outlet-history policy whose logit is positive exactly when
/// `y >= 0.01 c_F`, i.e. the breakthrough rule.
fn threshold_policy() -> Policy {
    let dense = |w: f64, b: f64| Dense {
        n_in: 1,
        n_out: 1,
        weights: vec![w],
        bias: vec![b],
    };
    let net = Mlp {
        activation: Activation::Tanh,
        layers: vec![dense(100.0, -1.0), dense(1.0, 0.0)],
    };
    Policy {
        version: POLICY_FORMAT_VERSION,
        observation: ObservationMode::OutletHistory { len: 1 },
        obs_scale: vec![1.0 / ContinuousInput::NOMINAL.c_f],
        actor: net.clone(),
        critic: net,
    }
}

#[test]
fn switching_returns_the_zero_state_observation() {
    let mut env = Env::new(column(), EnvConfig::default()).unwrap();
    let zero_obs = env.reset();
    for _ in 0..12 {
        env.step(false).unwrap();
    }
    let t = env.step(true).unwrap();
    assert_eq!(t.observation, zero_obs);
    assert!(env.state().is_zero());
}

#[test]
fn idle_fresh_column_without_feed_costs_nothing() {
    let cfg = EnvConfig {
        nominal: ContinuousInput::new(0.0, ContinuousInput::NOMINAL.q),
        ..EnvConfig::default()
    };
    let mut env = Env::new(column(), cfg).unwrap();
    env.reset();
    assert_eq!(env.step(false).unwrap().reward, 0.0);
}

#[test]
fn always_switching_episode_returns_minus_six() {
    let cfg = EnvConfig {
        w_s: 0.7,
        w_d: 0.3,
        ..EnvConfig::default()
    };
    let mut env = Env::new(column(), cfg).unwrap();
    env.reset();
    let mut ret = 0.0;
    for k in 0..20 {
        let t = env.step(true).unwrap();
        ret += t.reward;
        assert_eq!(t.done, k == 19);
    }
    assert!((ret + 6.0).abs() < 1e-12);
    assert!(matches!(env.step(true), Err(Error::EpisodeDone)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn negated_return_is_the_window_total_cost(actions in prop::collection::vec(prop::bool::weighted(0.1), 20)) {
        let column = column();
        let mut env = Env::new(column.clone(), EnvConfig::default()).unwrap();
        env.reset();
        let mut ret = 0.0;
        for &a in &actions {
            ret += env.step(a).unwrap().reward;
        }
        let cfg = LoopConfig { steps: 20, ..LoopConfig::default() };
        let traj = run_closed_loop(&column, &mut Script(actions.clone()), &cfg).unwrap();
        let m = compute_metrics(&traj, 1.0, 0.5);
        prop_assert!((-ret - m.tc).abs() <= 1e-12 * (1.0 + m.tc), "{} vs {}", -ret, m.tc);
    }
}

#[test]
fn cached_states_equal_fresh_integration() {
    let column = column();
    let actions: Vec<bool> = (1..=20).map(|k| k == 9).collect();
    let mut env = Env::new(column.clone(), EnvConfig::default()).unwrap();
    env.reset();
    let mut states = vec![env.state().clone()];
    for &a in &actions {
        env.step(a).unwrap();
        states.push(env.state().clone());
    }
    let cfg = LoopConfig {
        steps: 20,
        record_states: true,
        ..LoopConfig::default()
    };
    let traj = run_closed_loop(&column, &mut Script(actions), &cfg).unwrap();
    for (k, s) in traj.states.unwrap().iter().enumerate() {
        assert_eq!(s, &states[k], "step {}", k + 1);
    }
}

#[test]
fn noisy_env_follows_the_plant_noise_streams() {
    let column = column();
    let noise = NoiseConfig {
        process_std: 3.0,
        meas_alpha: 1e-2,
        meas_std: 5.0,
        seed: 41,
        ..NoiseConfig::default()
    };
    let actions: Vec<bool> = (1..=20).map(|k| k == 14).collect();
    let cfg = EnvConfig {
        noise: noise.clone(),
        ..EnvConfig::default()
    };
    let mut env = Env::new(column.clone(), cfg).unwrap();
    env.reset();
    let mut x_out = Vec::new();
    for &a in &actions {
        x_out.push(env.step(a).unwrap().x_out);
    }
    let loop_cfg = LoopConfig {
        steps: 20,
        noise,
        ..LoopConfig::default()
    };
    let traj = run_closed_loop(&column, &mut Script(actions), &loop_cfg).unwrap();
    let plant: Vec<f64> = traj.records.iter().map(|r| r.x_out).collect();
    assert_eq!(x_out, plant);
}

#[test]
fn threshold_policy_reproduces_the_breakthrough_rule() {
    let column = column();
    let cfg = LoopConfig::default();
    let policy = threshold_policy();
    let rl = run_closed_loop(&column, &mut PolicyController::new(policy), &cfg).unwrap();
    let trad = run_closed_loop(&column, &mut Traditional::default(), &cfg).unwrap();
    assert_eq!(rl.switch_steps(), trad.switch_steps());
    let m = compute_metrics(&rl, 1.0, 0.5);
    let intervals = m.intervals();
    assert!(!intervals.is_empty());
    assert!(intervals.iter().all(|&d| d == m.switch_steps[0]));
}

#[test]
fn deterministic_replicates_agree() {
    let column = column();
    let ev = evaluate_policy(&column, &threshold_policy(), &LoopConfig::default(), &[1, 2, 3], 1.0, 0.5).unwrap();
    assert!(ev.runs.windows(2).all(|w| w[0].1 == w[1].1));
    assert_eq!(ev.mean_tc, ev.runs[0].1.tc);
}

#[test]
fn smoke_training_logs_every_batch() {
    let cfg = AgentConfig {
        episodes: 200,
        ..AgentConfig::default()
    };
    let trained = train_ppo(&column(), &EnvConfig::default(), &cfg, 3).unwrap();
    assert_eq!(trained.log.len(), 20);
    assert!(trained.log.windows(2).all(|w| w[1].episodes > w[0].episodes && w[1].batch == w[0].batch + 1));
    assert_eq!(trained.log.last().unwrap().episodes, 200);
    let mut buf = Vec::new();
    trained.write_log_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 21);
}

#[test]
fn same_seed_same_policy() {
    let cfg = AgentConfig {
        episodes: 40,
        ..AgentConfig::default()
    };
    let a = train_ppo(&column(), &EnvConfig::default(), &cfg, 5).unwrap();
    let b = train_ppo(&column(), &EnvConfig::default(), &cfg, 5).unwrap();
    assert_eq!(a, b);
    let c = train_ppo(&column(), &EnvConfig::default(), &cfg, 6).unwrap();
    assert_ne!(a.policy, c.policy);
}

#[test]
fn policy_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let p = threshold_policy();
    p.save(&path).unwrap();
    assert_eq!(Policy::load(&path).unwrap(), p);
    assert!(matches!(Policy::load(&dir.path().join("none.json")), Err(Error::MissingArtifact(_))));
}

#[test]
fn myopic_agent_switches_no_earlier() {
    let column = column();
    let first_switch = |gamma: f64| {
        let cfg = AgentConfig {
            episodes: 400,
            gamma,
            ..AgentConfig::default()
        };
        let trained = train_ppo(&column, &EnvConfig::default(), &cfg, 0).unwrap();
        let ev = evaluate_policy(&column, &trained.policy, &LoopConfig::default(), &[0], 1.0, 0.5).unwrap();
        ev.runs[0].1.switch_steps.first().copied().unwrap_or(usize::MAX)
    };
    let myopic = first_switch(0.0);
    let farsighted = first_switch(0.99);
    assert!(farsighted < usize::MAX, "discounted agent never switched");
    assert!(myopic >= farsighted, "{myopic} < {farsighted}");
}

#[test]
fn outlet_reading_drives_history_observations() {
    let cfg = EnvConfig {
        observation: ObservationMode::OutletHistory { len: 2 },
        ..EnvConfig::default()
    };
    let mut env = Env::new(column(), cfg).unwrap();
    assert_eq!(env.observation_dim(), 2);
    let mut obs = env.reset();
    assert_eq!(obs, vec![0.0, 0.0]);
    for _ in 0..17 {
        let before = outlet_concentration(env.state());
        let t = env.step(false).unwrap();
        assert_eq!(t.observation[1], before);
        assert_eq!(t.observation[0], outlet_concentration(env.state()));
        obs = t.observation;
    }
    assert!(obs[0] > obs[1]);
}
