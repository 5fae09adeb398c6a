//! Fusion-weight assignment with TD3.
//!
//! Samplers propose weight vectors for the trusted models, score the fused
//! model on the server holdout and push transitions into a shared replay
//! buffer. A single learner owns twin critics, a delayed actor and their
//! target copies; after training, the actor's noiseless output is the
//! fusion weighting.

pub mod buffer;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use buffer::{ReplayBuffer, Transition};

use crate::env::{check_simplex, evaluate, proportional_weights, uniform_weights, weighted_aggregate, Dataset};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{
    self, backward, forward_trace, init_net, sgd_step_in_place, softmax, softmax_backward,
    Gradients, ModelParams, NetSpec, OutputHead,
};
use crate::seed::{self, derive_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    k: usize,
    obs: Vec<f64>,
}

impl WeightState {
    pub fn as_slice(&self) -> &[f64] {
        &self.obs
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Observation layout: `[counts / sum(counts) (K), accs (K), global_acc]`.
pub fn encode_weight_state(counts: &[usize], accs: &[f64], global_acc: f64) -> Result<WeightState> {
    let k = counts.len();
    if k == 0 {
        return Err(Error::Empty("weight state"));
    }
    ensure_len("model accuracies", k, accs.len())?;
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("total sample count is zero".into()));
    }
    let in_unit = |v: &f64| (0.0..=1.0).contains(v);
    if !accs.iter().all(in_unit) || !in_unit(&global_acc) {
        return Err(Error::InvalidArgument("accuracies must lie in [0, 1]".into()));
    }
    let mut obs = Vec::with_capacity(2 * k + 1);
    obs.extend(counts.iter().map(|&c| c as f64 / total as f64));
    obs.extend_from_slice(accs);
    obs.push(global_acc);
    Ok(WeightState { k, obs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightAction {
    weights: Vec<f64>,
}

impl WeightAction {
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        check_simplex(&weights)?;
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardFactors {
    pub phi: f64,
    pub psi: f64,
}

impl Default for RewardFactors {
    fn default() -> Self {
        Self { phi: 100.0, psi: 100.0 }
    }
}

impl RewardFactors {
    pub fn validate(&self) -> Result<()> {
        if self.phi > 0.0 && self.psi > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig("reward factors must be positive".into()))
        }
    }
}

/// `phi * (acc_m - acc_all)` above the uniform baseline, `psi * (..)` otherwise.
pub fn weight_reward(acc_m: f64, acc_all: f64, factors: &RewardFactors) -> f64 {
    let gap = acc_m - acc_all;
    if gap > 0.0 {
        factors.phi * gap
    } else {
        factors.psi * gap
    }
}

/// `r + gamma * min(q1, q2)`, or `r` at a terminal transition.
pub fn td_target(reward: f64, gamma: f64, q1: f64, q2: f64, done: bool) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut ModelParams, online: &ModelParams, tau: f64) -> Result<()> {
    if !target.same_layout(online) {
        return Err(Error::LayoutMismatch);
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    if tau == 1.0 {
        target.values.copy_from_slice(&online.values);
        return Ok(());
    }
    target
        .values
        .iter_mut()
        .zip(&online.values)
        .for_each(|(t, w)| *t = tau * w + (1.0 - tau) * *t);
    Ok(())
}

pub fn actor_spec(k: usize, hidden: &[usize]) -> Result<NetSpec> {
    NetSpec::mlp(2 * k + 1, hidden, k, OutputHead::Linear)
}

pub fn critic_spec(k: usize, hidden: &[usize]) -> Result<NetSpec> {
    NetSpec::mlp(3 * k + 1, hidden, 1, OutputHead::Linear)
}

fn noisy_softmax(logits: &[f64], noise: impl FnMut() -> f64) -> Result<Vec<f64>> {
    let mut noise = noise;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weight actor logits".into()));
    }
    let z: Vec<f64> = logits.iter().map(|&l| l + noise()).collect();
    softmax(&z)
}

fn actor_logits(actor: &ModelParams, state: &WeightState) -> Result<Vec<f64>> {
    ensure_len("weight actor input", actor.spec.input_dim(), state.obs.len())?;
    ensure_len("weight actor output", state.k, actor.spec.output_dim())?;
    nn::logits(actor, &state.obs)
}

pub fn act_with(actor: &ModelParams, state: &WeightState, noise_sigma: f64, rng: &mut impl Rng) -> Result<WeightAction> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma {noise_sigma} is negative")));
    }
    let logits = actor_logits(actor, state)?;
    let weights = if noise_sigma == 0.0 {
        noisy_softmax(&logits, || 0.0)?
    } else {
        noisy_softmax(&logits, || noise_sigma * rng.sample::<f64, _>(StandardNormal))?
    };
    Ok(WeightAction { weights })
}

/// `softmax(actor(state) + N(0, sigma^2))`; sigma 0 is the greedy action.
pub fn act(actor: &ModelParams, state: &WeightState, noise_sigma: f64, seed: u64) -> Result<WeightAction> {
    act_with(actor, state, noise_sigma, &mut seed::rng(seed))
}

fn critic_input(state: &WeightState, action: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.obs.len() + action.len());
    x.extend_from_slice(&state.obs);
    x.extend_from_slice(action);
    x
}

pub fn q_value(critic: &ModelParams, state: &WeightState, action: &[f64]) -> Result<f64> {
    Ok(nn::logits(critic, &critic_input(state, action))?[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TD3Nets {
    pub actor: ModelParams,
    pub critic1: ModelParams,
    pub critic2: ModelParams,
    pub target_actor: ModelParams,
    pub target_critic1: ModelParams,
    pub target_critic2: ModelParams,
}

impl TD3Nets {
    pub fn new(k: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let actor = init_net(&actor_spec(k, hidden)?, derive_seed(&[seed, 1]))?;
        let critic1 = init_net(&critic_spec(k, hidden)?, derive_seed(&[seed, 2]))?;
        let critic2 = init_net(&critic_spec(k, hidden)?, derive_seed(&[seed, 3]))?;
        Ok(Self {
            target_actor: actor.clone(),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            actor,
            critic1,
            critic2,
        })
    }

    pub fn k(&self) -> usize {
        self.actor.spec.output_dim()
    }
}

/// Target-policy smoothing: pre-softmax noise `clip(N(0, sigma^2), -clip, clip)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Smoothing {
    pub sigma: f64,
    pub clip: f64,
}

impl Default for Smoothing {
    fn default() -> Self {
        Self { sigma: 0.2, clip: 0.5 }
    }
}

/// TD targets for a batch from the target networks.
pub fn batch_targets(
    nets: &TD3Nets,
    batch: &[&Transition],
    gamma: f64,
    smoothing: &Smoothing,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                return Ok(t.reward);
            }
            let logits = actor_logits(&nets.target_actor, &t.next_state)?;
            let a = noisy_softmax(&logits, || {
                (smoothing.sigma * rng.sample::<f64, _>(StandardNormal)).clamp(-smoothing.clip, smoothing.clip)
            })?;
            let q1 = q_value(&nets.target_critic1, &t.next_state, &a)?;
            let q2 = q_value(&nets.target_critic2, &t.next_state, &a)?;
            Ok(td_target(t.reward, gamma, q1, q2, false))
        })
        .collect()
}

/// Critic regression `mean_j (y_j - Q(s_j, a_j))^2` and its gradient.
pub fn critic_objective(critic: &ModelParams, batch: &[&Transition], targets: &[f64]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    ensure_len("critic targets", batch.len(), targets.len())?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_like(critic);
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let trace = forward_trace(critic, &critic_input(&t.state, &t.action.weights))?;
        let residual = trace.raw_output()[0] - y;
        if !residual.is_finite() {
            return Err(Error::NonFinite("critic residual".into()));
        }
        loss += residual * residual * scale;
        backward(critic, &trace, &[2.0 * residual * scale], &mut grads)?;
    }
    Ok((loss, grads))
}

/// Deterministic policy-gradient surrogate `-mean_j Q1(s_j, softmax(P(s_j)))`
/// and its gradient with respect to the actor.
pub fn actor_objective(actor: &ModelParams, critic: &ModelParams, states: &[&WeightState]) -> Result<(f64, Gradients)> {
    if states.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let scale = 1.0 / states.len() as f64;
    let mut grads = Gradients::zeros_like(actor);
    let mut critic_scratch = Gradients::zeros_like(critic);
    let mut loss = 0.0;
    for s in states {
        let a_trace = forward_trace(actor, &s.obs)?;
        let probs = softmax(a_trace.raw_output())?;
        let c_trace = forward_trace(critic, &critic_input(s, &probs))?;
        loss -= c_trace.raw_output()[0] * scale;
        let dx = backward(critic, &c_trace, &[-scale], &mut critic_scratch)?;
        let d_probs = &dx[s.obs.len()..];
        let d_logits = softmax_backward(&probs, d_probs);
        backward(actor, &a_trace, &d_logits, &mut grads)?;
    }
    Ok((loss, grads))
}

/// One gradient step on both critics; actor and targets are untouched.
pub fn critic_update(
    nets: &mut TD3Nets,
    batch: &[&Transition],
    gamma: f64,
    lr: f64,
    smoothing: &Smoothing,
    rng: &mut impl Rng,
) -> Result<f64> {
    let targets = batch_targets(nets, batch, gamma, smoothing, rng)?;
    let (l1, g1) = critic_objective(&nets.critic1, batch, &targets)?;
    let (l2, g2) = critic_objective(&nets.critic2, batch, &targets)?;
    sgd_step_in_place(&mut nets.critic1, &g1, lr)?;
    sgd_step_in_place(&mut nets.critic2, &g2, lr)?;
    Ok(0.5 * (l1 + l2))
}

/// Every `d`-th step: one actor ascent step on `Q1`, then soft target
/// updates. Returns whether anything changed.
pub fn delayed_actor_and_target_update(
    nets: &mut TD3Nets,
    batch: &[&Transition],
    step_index: u64,
    d: u64,
    lr: f64,
    tau: f64,
) -> Result<bool> {
    if d == 0 {
        return Err(Error::InvalidArgument("actor delay must be at least 1".into()));
    }
    if step_index % d != 0 {
        return Ok(false);
    }
    let states: Vec<&WeightState> = batch.iter().map(|t| &t.state).collect();
    let (_, g) = actor_objective(&nets.actor, &nets.critic1, &states)?;
    sgd_step_in_place(&mut nets.actor, &g, lr)?;
    soft_update(&mut nets.target_actor, &nets.actor, tau)?;
    soft_update(&mut nets.target_critic1, &nets.critic1, tau)?;
    soft_update(&mut nets.target_critic2, &nets.critic2, tau)?;
    Ok(true)
}

/// Weight-assignment environment over one set of trusted models.
pub struct WeightEnv<'a> {
    models: &'a [ModelParams],
    holdout: &'a Dataset,
    counts: Vec<usize>,
    accs: Vec<f64>,
    acc_all: f64,
    factors: RewardFactors,
}

impl<'a> WeightEnv<'a> {
    pub fn new(models: &'a [ModelParams], counts: &[usize], holdout: &'a Dataset, factors: RewardFactors) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Empty("trusted model list"));
        }
        ensure_len("trusted sample counts", models.len(), counts.len())?;
        proportional_weights(counts)?;
        if holdout.is_empty() {
            return Err(Error::Empty("server holdout"));
        }
        factors.validate()?;
        let accs = models
            .iter()
            .map(|m| evaluate(m, holdout))
            .collect::<Result<Vec<_>>>()?;
        let acc_all = evaluate(&weighted_aggregate(models, &uniform_weights(models.len()))?, holdout)?;
        Ok(Self {
            models,
            holdout,
            counts: counts.to_vec(),
            accs,
            acc_all,
            factors,
        })
    }

    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn acc_all(&self) -> f64 {
        self.acc_all
    }

    pub fn model_accuracies(&self) -> &[f64] {
        &self.accs
    }

    pub fn state(&self) -> WeightState {
        encode_weight_state(&self.counts, &self.accs, self.acc_all).expect("validated at construction")
    }

    pub fn fused_accuracy(&self, weights: &[f64]) -> Result<f64> {
        evaluate(&weighted_aggregate(self.models, weights)?, self.holdout)
    }

    /// One terminal interaction: fuse with `action`, score, reward.
    pub fn step(&self, state: &WeightState, action: WeightAction) -> Result<Transition> {
        let acc = self.fused_accuracy(&action.weights)?;
        Ok(Transition {
            state: state.clone(),
            reward: weight_reward(acc, self.acc_all, &self.factors),
            next_state: encode_weight_state(&self.counts, &self.accs, acc)?,
            action,
            done: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub exploration_sigma: f64,
    pub smoothing: Smoothing,
    pub capacity: usize,
    pub batch: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub samplers: usize,
    /// Learner iterations per training call.
    pub iterations: usize,
    /// Samplers refresh their actor snapshot every this many iterations.
    pub refresh_interval: usize,
    pub hidden: Vec<usize>,
    pub factors: RewardFactors,
    /// Keep nets and buffer between communication rounds.
    pub warm_start: bool,
    /// Run samplers on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            exploration_sigma: 0.1,
            smoothing: Smoothing::default(),
            capacity: 10_000,
            batch: 64,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            samplers: 4,
            iterations: 300,
            refresh_interval: 1,
            hidden: vec![64, 64],
            factors: RewardFactors::default(),
            warm_start: true,
            parallel: true,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("stage2: {m}")));
        if self.samplers < 1 {
            return bad("need at least one sampler");
        }
        if self.iterations < 1 {
            return bad("need at least one learner iteration");
        }
        if self.batch < 1 || self.batch > self.capacity {
            return bad("batch must be in 1..=capacity");
        }
        if self.policy_delay < 1 || self.refresh_interval < 1 {
            return bad("policy delay and refresh interval must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("gamma and tau must lie in [0, 1]");
        }
        if !(self.exploration_sigma >= 0.0 && self.smoothing.sigma >= 0.0 && self.smoothing.clip >= 0.0) {
            return bad("noise scales must be nonnegative");
        }
        if !(self.lr_actor >= 0.0 && self.lr_critic >= 0.0) {
            return bad("learning rates must be nonnegative");
        }
        self.factors.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Stage2Trace {
    /// Mean sampler reward per learner iteration.
    pub rewards: Vec<f64>,
    /// Mean critic loss per iteration that ran a learner step.
    pub critic_losses: Vec<f64>,
}

/// Learner state: networks, replay buffer and step counters.
#[derive(Debug, Clone)]
pub struct WeightAgent {
    pub nets: TD3Nets,
    pub buffer: ReplayBuffer,
    pub config: Stage2Config,
    seed: u64,
    iteration: u64,
    learner_steps: u64,
}

impl WeightAgent {
    pub fn new(k: usize, config: Stage2Config, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            nets: TD3Nets::new(k, &config.hidden, seed)?,
            buffer: ReplayBuffer::new(config.capacity)?,
            config,
            seed,
            iteration: 0,
            learner_steps: 0,
        })
    }

    pub fn learner_steps(&self) -> u64 {
        self.learner_steps
    }

    /// Sampler/learner loop. Every iteration each sampler takes one step
    /// with its actor snapshot; transitions enter the buffer in sampler
    /// order, then the learner takes one step once a batch is available.
    pub fn train(&mut self, env: &WeightEnv<'_>, iterations: usize) -> Result<Stage2Trace> {
        if env.k() != self.nets.k() {
            return Err(Error::DimensionMismatch {
                context: "weight environment models",
                expected: self.nets.k(),
                actual: env.k(),
            });
        }
        let cfg = self.config.clone();
        let state = env.state();
        let mut snapshot = self.nets.actor.clone();
        let mut trace = Stage2Trace::default();
        for i in 0..iterations {
            self.iteration += 1;
            if i % cfg.refresh_interval == 0 {
                snapshot = self.nets.actor.clone();
            }
            let sample = |j: usize| -> Result<Transition> {
                let s = derive_seed(&[self.seed, seed::stream::STAGE2, self.iteration, j as u64]);
                let action = act(&snapshot, &state, cfg.exploration_sigma, s)?;
                env.step(&state, action)
            };
            let transitions: Vec<Transition> = if cfg.parallel {
                (0..cfg.samplers).into_par_iter().map(sample).collect::<Result<_>>()?
            } else {
                (0..cfg.samplers).map(sample).collect::<Result<_>>()?
            };
            trace
                .rewards
                .push(transitions.iter().map(|t| t.reward).sum::<f64>() / transitions.len() as f64);
            for t in transitions {
                self.buffer.push(t);
            }
            if self.buffer.len() >= cfg.batch {
                let mut rng = seed::rng(derive_seed(&[self.seed, seed::stream::STAGE2, self.iteration, u64::MAX]));
                let batch = self.buffer.sample_with(cfg.batch, &mut rng)?;
                let loss = critic_update(&mut self.nets, &batch, cfg.gamma, cfg.lr_critic, &cfg.smoothing, &mut rng)?;
                self.learner_steps += 1;
                delayed_actor_and_target_update(
                    &mut self.nets,
                    &batch,
                    self.learner_steps,
                    cfg.policy_delay,
                    cfg.lr_actor,
                    cfg.tau,
                )?;
                trace.critic_losses.push(loss);
            }
        }
        Ok(trace)
    }

    pub fn greedy(&self, env: &WeightEnv<'_>) -> Result<WeightAction> {
        act(&self.nets.actor, &env.state(), 0.0, 0)
    }
}

#[derive(Debug, Clone)]
pub struct WeightOutcome {
    pub weights: WeightAction,
    pub agent: WeightAgent,
    pub trace: Stage2Trace,
}

/// Trains a fresh agent on the trusted models and returns its greedy weights.
pub fn train_weights(
    trusted_models: &[ModelParams],
    counts: &[usize],
    holdout: &Dataset,
    config: &Stage2Config,
    seed: u64,
) -> Result<WeightOutcome> {
    config.validate()?;
    if trusted_models.len() < 2 {
        return Err(Error::InvalidArgument("weight training needs at least two models".into()));
    }
    let env = WeightEnv::new(trusted_models, counts, holdout, config.factors)?;
    let mut agent = WeightAgent::new(trusted_models.len(), config.clone(), seed)?;
    let trace = agent.train(&env, config.iterations)?;
    Ok(WeightOutcome {
        weights: agent.greedy(&env)?,
        agent,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn state2() -> WeightState {
        encode_weight_state(&[4222, 4938], &[0.6, 0.7], 0.65).unwrap()
    }

    fn toy_batch(k: usize, n: usize, done: bool) -> Vec<Transition> {
        let mut rng = seed::rng(5);
        (0..n)
            .map(|j| {
                let counts: Vec<usize> = (0..k).map(|i| 10 + i + j).collect();
                let accs: Vec<f64> = (0..k).map(|i| 0.3 + 0.1 * ((i + j) % 5) as f64).collect();
                let s = encode_weight_state(&counts, &accs, 0.5).unwrap();
                let logits: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                Transition {
                    state: s.clone(),
                    action: WeightAction::from_weights(softmax(&logits).unwrap()).unwrap(),
                    reward: j as f64 - 1.0,
                    next_state: s,
                    done,
                }
            })
            .collect()
    }

    #[test]
    fn state_examples() {
        let s = state2();
        let expected = [0.46092, 0.53908, 0.6, 0.7, 0.65];
        for (a, b) in s.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-5);
        }
        let s = encode_weight_state(&[100, 100], &[0.1, 0.2], 0.3).unwrap();
        assert_eq!(&s.as_slice()[..2], &[0.5, 0.5]);
        assert_eq!(encode_weight_state(&[1, 2, 3], &[0.1; 3], 0.1).unwrap().as_slice().len(), 7);
        assert!(encode_weight_state(&[1, 2], &[0.1], 0.1).is_err());
        assert!(encode_weight_state(&[0, 0], &[0.1, 0.1], 0.1).is_err());
    }

    #[test]
    fn greedy_action_examples() {
        let actor = ModelParams::zeros(actor_spec(2, &[4]).unwrap()).unwrap();
        let a = act(&actor, &state2(), 0.0, 1).unwrap();
        assert_eq!(a.weights(), &[0.5, 0.5]);
        let actor = init_net(&actor_spec(2, &[4]).unwrap(), 3).unwrap();
        assert_eq!(act(&actor, &state2(), 0.0, 1).unwrap(), act(&actor, &state2(), 0.0, 99).unwrap());
        assert!(act(&actor, &state2(), -1.0, 1).is_err());
    }

    #[test]
    fn reward_examples() {
        let f = RewardFactors::default();
        assert!((weight_reward(0.70, 0.60, &f) - 10.0).abs() < 1e-9);
        assert_eq!(weight_reward(0.6, 0.6, &f), 0.0);
        assert!((weight_reward(0.55, 0.60, &f) + 5.0).abs() < 1e-9);
        let asym = RewardFactors { phi: 1.0, psi: 3.0 };
        assert!((weight_reward(0.5, 0.6, &asym) + 0.3).abs() < 1e-12);
    }

    #[test]
    fn td_target_examples() {
        assert!((td_target(1.0, 0.99, 2.0, 3.0, false) - 2.98).abs() < 1e-12);
        assert_eq!(td_target(1.0, 0.0, 2.0, 3.0, false), 1.0);
        assert_eq!(td_target(1.0, 0.5, 4.0, 4.0, false), 3.0);
        assert_eq!(td_target(1.0, 0.99, 2.0, 3.0, true), 1.0);
    }

    #[test]
    fn soft_update_examples() {
        let spec = NetSpec::new(vec![1, 1], OutputHead::Linear).unwrap();
        let online = ModelParams::from_values(spec.clone(), vec![1.0, 0.0]).unwrap();
        let mut target = ModelParams::zeros(spec).unwrap();
        soft_update(&mut target, &online, 0.005).unwrap();
        assert!((target.values[0] - 0.005).abs() < 1e-15);
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online);
        assert!(soft_update(&mut target, &online, 1.5).is_err());
    }

    #[test]
    fn nets_start_as_copies() {
        let n = TD3Nets::new(3, &[8], 1).unwrap();
        assert_eq!(n.actor, n.target_actor);
        assert_eq!(n.critic1, n.target_critic1);
        assert_eq!(n.critic2, n.target_critic2);
        assert_ne!(n.critic1, n.critic2);
        assert_eq!(n.critic1.spec.input_dim(), 10);
        assert_eq!(n.actor.spec.input_dim(), 7);
    }

    #[test]
    fn critic_update_isolation() {
        let mut nets = TD3Nets::new(2, &[6], 2).unwrap();
        let batch = toy_batch(2, 5, false);
        let refs: Vec<&Transition> = batch.iter().collect();
        let before = nets.clone();
        critic_update(&mut nets, &refs, 0.99, 1e-2, &Smoothing::default(), &mut seed::rng(1)).unwrap();
        assert_eq!(nets.actor, before.actor);
        assert_eq!(nets.target_actor, before.target_actor);
        assert_eq!(nets.target_critic1, before.target_critic1);
        assert_eq!(nets.target_critic2, before.target_critic2);
        assert_ne!(nets.critic1, before.critic1);
    }

    #[test]
    fn exact_critics_do_not_move() {
        let mut nets = TD3Nets::new(2, &[6], 2).unwrap();
        nets.critic2 = nets.critic1.clone();
        let mut batch = toy_batch(2, 4, true);
        for t in &mut batch {
            t.reward = q_value(&nets.critic1, &t.state, t.action.weights()).unwrap();
        }
        let refs: Vec<&Transition> = batch.iter().collect();
        let before = nets.clone();
        critic_update(&mut nets, &refs, 0.99, 0.1, &Smoothing::default(), &mut seed::rng(1)).unwrap();
        assert_eq!(nets, before);
    }

    #[test]
    fn delay_schedule() {
        let mut nets = TD3Nets::new(2, &[6], 2).unwrap();
        // move an online critic so the target blend is visible
        nets.critic1.values.iter_mut().for_each(|v| *v += 0.1);
        let batch = toy_batch(2, 4, true);
        let refs: Vec<&Transition> = batch.iter().collect();
        let before = nets.clone();
        assert!(!delayed_actor_and_target_update(&mut nets, &refs, 1, 2, 0.01, 0.005).unwrap());
        assert_eq!(nets, before);
        assert!(delayed_actor_and_target_update(&mut nets, &refs, 2, 2, 0.01, 0.005).unwrap());
        assert_ne!(nets.actor, before.actor);
        assert_ne!(nets.target_critic1, before.target_critic1);
        assert_eq!(nets.critic1, before.critic1);
        assert_eq!(nets.critic2, before.critic2);
        delayed_actor_and_target_update(&mut nets, &refs, 4, 2, 0.01, 1.0).unwrap();
        assert_eq!(nets.target_actor, nets.actor);
        assert_eq!(nets.target_critic1, nets.critic1);
    }

    fn assert_fd(values: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) {
        let eps = 1e-5;
        let mut v = values.to_vec();
        for i in 0..v.len() {
            let orig = v[i];
            v[i] = orig + eps;
            let up = f(&v);
            v[i] = orig - eps;
            let down = f(&v);
            v[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            assert!((analytic[i] - numeric).abs() / denom < 1e-4, "param {i}: {} vs {numeric}", analytic[i]);
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let critic = init_net(&critic_spec(2, &[5]).unwrap(), 7).unwrap();
        let batch = toy_batch(2, 4, true);
        let refs: Vec<&Transition> = batch.iter().collect();
        let targets = [0.5, -1.0, 2.0, 0.0];
        let (_, g) = critic_objective(&critic, &refs, &targets).unwrap();
        assert_fd(&critic.values, &g.values, |v| {
            let p = ModelParams::from_values(critic.spec.clone(), v.to_vec()).unwrap();
            critic_objective(&p, &refs, &targets).unwrap().0
        });
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let actor = init_net(&actor_spec(3, &[5]).unwrap(), 8).unwrap();
        let critic = init_net(&critic_spec(3, &[6]).unwrap(), 9).unwrap();
        let batch = toy_batch(3, 4, true);
        let states: Vec<&WeightState> = batch.iter().map(|t| &t.state).collect();
        let (_, g) = actor_objective(&actor, &critic, &states).unwrap();
        assert_fd(&actor.values, &g.values, |v| {
            let p = ModelParams::from_values(actor.spec.clone(), v.to_vec()).unwrap();
            actor_objective(&p, &critic, &states).unwrap().0
        });
    }

    #[test]
    fn config_validation() {
        let c = Stage2Config { samplers: 0, ..Stage2Config::default() };
        assert!(c.validate().is_err());
        let c = Stage2Config { iterations: 0, ..Stage2Config::default() };
        assert!(c.validate().is_err());
        let c = Stage2Config { batch: 20, capacity: 10, ..Stage2Config::default() };
        assert!(c.validate().is_err());
        assert!(Stage2Config::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn actions_are_on_the_simplex(seed in any::<u64>(), sigma in 0.0f64..3.0, scale in 0.1f64..10.0) {
            let mut actor = init_net(&actor_spec(4, &[8]).unwrap(), seed).unwrap();
            actor.values.iter_mut().for_each(|v| *v *= scale);
            let s = encode_weight_state(&[3, 1, 4, 1], &[0.2, 0.9, 0.5, 0.4], 0.6).unwrap();
            let a = act(&actor, &s, sigma, seed).unwrap();
            prop_assert!(check_simplex(a.weights()).is_ok());
        }

        #[test]
        fn td_target_is_symmetric_and_bounded(r in -10.0f64..10.0, g in 0.0f64..=1.0, q1 in -10.0f64..10.0, q2 in -10.0f64..10.0) {
            let y = td_target(r, g, q1, q2, false);
            prop_assert_eq!(y, td_target(r, g, q2, q1, false));
            prop_assert!(y <= r + g * q1 + 1e-12 && y <= r + g * q2 + 1e-12);
        }

        #[test]
        fn soft_update_contracts(w in -5.0f64..5.0, t in -5.0f64..5.0, tau in 0.0f64..=1.0) {
            let spec = NetSpec::new(vec![1, 1], OutputHead::Linear).unwrap();
            let online = ModelParams::from_values(spec.clone(), vec![w, 0.0]).unwrap();
            let mut target = ModelParams::from_values(spec, vec![t, 0.0]).unwrap();
            soft_update(&mut target, &online, tau).unwrap();
            prop_assert!(((target.values[0] - w).abs() - (1.0 - tau) * (t - w).abs()).abs() < 1e-9);
        }

        #[test]
        fn reward_sign(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            prop_assert_eq!(weight_reward(a, b, &RewardFactors::default()) >= 0.0, a >= b);
        }
    }
}
